fn main() {
    std::process::exit(apitc::cli::run(std::env::args().skip(1).collect()));
}
