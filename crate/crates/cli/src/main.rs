fn main() {
    std::process::exit(tribody_cli::run(std::env::args_os()));
}
