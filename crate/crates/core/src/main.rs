fn main() {
    std::process::exit(photoreact::cli::run(std::env::args_os()));
}
