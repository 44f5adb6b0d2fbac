fn main() {
    std::process::exit(deposim::cli::main_with_args(std::env::args_os()));
}
