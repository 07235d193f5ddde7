fn main() {
    std::process::exit(rvic::cli::run(std::env::args_os()));
}
