fn main() {
    std::process::exit(porflow::cli::cli_main(std::env::args_os()));
}
