fn main() {
    std::process::exit(fmlab::cli::run(std::env::args_os()));
}
