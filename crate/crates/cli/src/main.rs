fn main() {
    std::process::exit(newsmil_cli::run(std::env::args_os()));
}
