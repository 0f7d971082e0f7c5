fn main() {
    std::process::exit(spkit_cli::run(std::env::args_os()));
}
