fn main() {
    std::process::exit(vemeta::cli::run(std::env::args_os()));
}
