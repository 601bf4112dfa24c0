fn main() {
    std::process::exit(pcqe_cli::run(std::env::args_os()));
}
