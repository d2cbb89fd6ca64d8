fn main() {
    std::process::exit(chainbench::cli::run_cli(std::env::args_os()));
}
