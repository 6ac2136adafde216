fn main() {
    std::process::exit(hdgan::cli::run(std::env::args_os()));
}
