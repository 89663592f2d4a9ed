fn main() {
    std::process::exit(dogid::cli::run(std::env::args_os()));
}
