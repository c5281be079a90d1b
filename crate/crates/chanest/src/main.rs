fn main() {
    std::process::exit(chanest::cli::run());
}
