fn main() {
    std::process::exit(gi_cli::run(std::env::args_os()));
}
