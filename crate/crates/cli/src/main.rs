fn main() {
    std::process::exit(penlink_cli::run(std::env::args_os()));
}
