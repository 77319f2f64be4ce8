fn main() {
    std::process::exit(mfergodic_cli::main_with_args(std::env::args_os()));
}
