fn main() {
    std::process::exit(heatmark::cli::run(std::env::args_os()));
}
