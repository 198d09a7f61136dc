fn main() {
    std::process::exit(petgan::cli::main_with_args(std::env::args().collect()));
}
