fn main() {
    std::process::exit(abreu_cli::run(std::env::args_os()));
}
