fn main() {
    std::process::exit(momadiff::cli::run(std::env::args_os()));
}
