fn main() {
    std::process::exit(drawdim::cli::run(std::env::args_os()));
}
