fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(rirkit::harness::cli::run(args));
}
