fn main() {
    std::process::exit(active_detect::cli::run(std::env::args_os()));
}
