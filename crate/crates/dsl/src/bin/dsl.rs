fn main() {
    std::process::exit(dsl::cli::main_with_args(std::env::args_os()));
}
