fn main() {
    std::process::exit(dmdkit::cli::run(std::env::args_os()));
}
