fn main() {
    std::process::exit(renewal2t::cli::run(std::env::args_os()));
}
