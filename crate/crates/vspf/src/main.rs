fn main() {
    std::process::exit(vspf::cli::run_cli(std::env::args_os()));
}
