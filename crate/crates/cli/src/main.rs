fn main() {
    std::process::exit(ventus_cli::run(std::env::args_os()));
}
