fn main() {
    std::process::exit(safemon::cli::run());
}
