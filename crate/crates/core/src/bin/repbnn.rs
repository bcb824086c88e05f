fn main() {
    std::process::exit(repbnn::cli::run(std::env::args_os()));
}
