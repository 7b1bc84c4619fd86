fn main() {
    std::process::exit(isrn::cli::run());
}
