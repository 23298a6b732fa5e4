fn main() {
    std::process::exit(shoprl::cli::run(std::env::args().skip(1)));
}
