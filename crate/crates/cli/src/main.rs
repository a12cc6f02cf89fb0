fn main() {
    std::process::exit(sensq_cli::run(std::env::args_os()));
}
