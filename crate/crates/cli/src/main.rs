fn main() {
    std::process::exit(mesocyclone_cli::run(std::env::args_os()));
}
