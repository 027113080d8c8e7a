fn main() {
    std::process::exit(emfsec_cli::run(std::env::args_os()));
}
