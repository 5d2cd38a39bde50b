fn main() {
    std::process::exit(e2a::harness::cli::run(std::env::args_os()));
}
