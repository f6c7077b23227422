fn main() {
    std::process::exit(worldpipe::cli::main_with_args(std::env::args_os()));
}
