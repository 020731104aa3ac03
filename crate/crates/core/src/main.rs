fn main() {
    std::process::exit(gbass::cli::run(std::env::args_os()));
}
