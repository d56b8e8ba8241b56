fn main() {
    std::process::exit(maskcraft::cli::run(std::env::args_os()));
}
