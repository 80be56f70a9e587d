fn main() {
    std::process::exit(tableforge_cli::run(std::env::args_os()));
}
