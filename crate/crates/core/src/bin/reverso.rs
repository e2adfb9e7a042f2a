fn main() {
    std::process::exit(reverso::cli::main_with_args(std::env::args_os()));
}
