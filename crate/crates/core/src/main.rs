fn main() {
    std::process::exit(posegen::cli::run());
}
