fn main() {
    std::process::exit(distcert::cli::main_with_args(std::env::args_os()));
}
