fn main() {
    std::process::exit(ila_core::cli::run(std::env::args_os()));
}
