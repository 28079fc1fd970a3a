fn main() {
    std::process::exit(spnet_cli::run(std::env::args_os()));
}
