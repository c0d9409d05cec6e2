fn main() {
    std::process::exit(wpgsa::cli::run(std::env::args_os()));
}
