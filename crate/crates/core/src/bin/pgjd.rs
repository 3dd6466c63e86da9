fn main() {
    std::process::exit(pgjd::cli::run_cli(std::env::args_os()));
}
