fn main() {
    std::process::exit(schur_alloc::cli::run(std::env::args_os()));
}
