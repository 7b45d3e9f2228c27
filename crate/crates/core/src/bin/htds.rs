fn main() {
    std::process::exit(htds::cli::main_with_args(std::env::args_os()));
}
