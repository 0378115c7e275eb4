fn main() {
    std::process::exit(tvnlr::cli::run(std::env::args_os()));
}
