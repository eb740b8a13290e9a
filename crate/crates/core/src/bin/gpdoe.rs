fn main() {
    std::process::exit(gpdoe::cli::run(std::env::args_os()));
}
