fn main() {
    std::process::exit(wsdo_cli::run(std::env::args_os()));
}
