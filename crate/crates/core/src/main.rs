fn main() {
    std::process::exit(superstate::cli::run(std::env::args_os()));
}
