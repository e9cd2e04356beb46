fn main() {
    std::process::exit(supcfa::cli::run());
}
