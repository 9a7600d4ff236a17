fn main() {
    std::process::exit(gapdiff::cli::run(std::env::args_os()));
}
