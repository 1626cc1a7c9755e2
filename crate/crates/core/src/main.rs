fn main() {
    std::process::exit(subdist_iv::cli::main_with_args(std::env::args_os()));
}
