fn main() {
    std::process::exit(nlre::cli::run(std::env::args_os()));
}
