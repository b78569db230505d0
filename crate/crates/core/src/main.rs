fn main() {
    std::process::exit(visnav::cli::run(std::env::args_os()));
}
