fn main() {
    std::process::exit(hypercone::cli::main_with_args(std::env::args_os()));
}
