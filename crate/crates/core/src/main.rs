fn main() {
    std::process::exit(nits::cli::run(std::env::args_os()));
}
