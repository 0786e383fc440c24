fn main() {
    std::process::exit(annoconsist_cli::run(std::env::args_os()));
}
