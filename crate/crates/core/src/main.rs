fn main() {
    std::process::exit(mutual_span::cli::main_with_args(std::env::args_os()));
}
