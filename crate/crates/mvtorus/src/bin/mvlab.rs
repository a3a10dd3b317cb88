fn main() {
    std::process::exit(mvtorus::cli::run(std::env::args_os()));
}
