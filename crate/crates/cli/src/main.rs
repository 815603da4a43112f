fn main() {
    std::process::exit(packsense_cli::run(std::env::args_os()));
}
