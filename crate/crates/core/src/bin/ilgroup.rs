fn main() {
    std::process::exit(ilgroup::cli::main_with_args(std::env::args_os()));
}
