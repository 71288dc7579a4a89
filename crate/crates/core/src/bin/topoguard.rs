fn main() {
    std::process::exit(topoguard::cli::main_with_args(std::env::args_os()));
}
