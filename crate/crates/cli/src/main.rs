fn main() {
    std::process::exit(scenemo_cli::run_cli(std::env::args_os()));
}
