fn main() {
    std::process::exit(roep::cli::run(std::env::args_os()));
}
