fn main() {
    std::process::exit(cropmap::cli::run(std::env::args_os()));
}
