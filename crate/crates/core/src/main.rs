fn main() {
    std::process::exit(droplab::cli::main_with_args(std::env::args_os()));
}
