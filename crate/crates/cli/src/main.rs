fn main() {
    std::process::exit(protograph_cli::run_command(std::env::args_os()));
}
