fn main() {
    std::process::exit(ita::cli::main_with_args(std::env::args_os()));
}
