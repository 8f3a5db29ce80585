fn main() {
    std::process::exit(alod::cli::main_with(std::env::args().collect()));
}
