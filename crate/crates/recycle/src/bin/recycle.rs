fn main() {
    std::process::exit(recycle::cli::run(std::env::args_os()));
}
