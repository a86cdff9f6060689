fn main() {
    reversym_cli::init_threads();
    std::process::exit(reversym_cli::run(std::env::args_os()));
}
