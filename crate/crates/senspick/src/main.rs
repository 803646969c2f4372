fn main() {
    std::process::exit(senspick::cli::run(std::env::args_os()));
}
