fn main() {
    std::process::exit(fann::cli::run());
}
