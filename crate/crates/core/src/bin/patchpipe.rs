fn main() {
    std::process::exit(patchpipe::cli::run_cli(std::env::args_os()));
}
