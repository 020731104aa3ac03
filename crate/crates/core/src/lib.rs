pub mod error;
pub mod measures;
pub mod gaussian;
pub mod bass_solver;
pub mod geometric_bridge;
pub mod duality_values;
pub mod simulate;
pub mod cli;
