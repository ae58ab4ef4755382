fn main() {
    std::process::exit(microsplat::cli::run(std::env::args_os()));
}
