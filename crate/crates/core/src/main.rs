fn main() {
    std::process::exit(uwrestore::cli::run(std::env::args_os()));
}
