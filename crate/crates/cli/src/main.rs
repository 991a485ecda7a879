fn main() {
    std::process::exit(voroto_cli::run(std::env::args_os()));
}
