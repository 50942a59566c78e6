fn main() {
    std::process::exit(aftsdar::cli::main_with_args(std::env::args_os()));
}
