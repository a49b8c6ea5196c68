fn main() {
    std::process::exit(driftlab_cli::main_with_args(std::env::args_os()));
}
