fn main() {
    std::process::exit(svefield::cli::run(std::env::args_os()));
}
