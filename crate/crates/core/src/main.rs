fn main() {
    std::process::exit(gsn_seq::cli::run(std::env::args_os()));
}
