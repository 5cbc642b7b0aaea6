fn main() {
    std::process::exit(repgn::cli::run_command(std::env::args_os()));
}
