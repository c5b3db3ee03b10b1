fn main() {
    std::process::exit(wrinkle_cli::run(std::env::args_os()));
}
