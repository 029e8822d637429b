fn main() {
    std::process::exit(mgr_cli::run(std::env::args_os()));
}
