fn main() {
    std::process::exit(gridcast::cli::main_with_args(std::env::args_os()));
}
