fn main() {
    std::process::exit(rmtune::cli::run(std::env::args()));
}
