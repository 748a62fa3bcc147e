fn main() {
    std::process::exit(solspec_cli::run(std::env::args_os()));
}
