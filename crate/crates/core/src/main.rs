fn main() {
    std::process::exit(emoclf::cli::main_with_args(std::env::args_os()));
}
