fn main() {
    std::process::exit(ran::cli::run_command(std::env::args().skip(1)));
}
