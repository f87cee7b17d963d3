fn main() {
    std::process::exit(guardlora::cli::run(std::env::args_os()));
}
