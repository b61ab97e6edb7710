fn main() {
    std::process::exit(silcarve_cli::run(std::env::args_os()));
}
