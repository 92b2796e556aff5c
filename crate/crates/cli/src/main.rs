fn main() {
    std::process::exit(ltpdpm_cli::main_with_args(std::env::args_os()));
}
