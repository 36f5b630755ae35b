fn main() {
    std::process::exit(turnrank::cli::main_with_args(std::env::args_os()));
}
