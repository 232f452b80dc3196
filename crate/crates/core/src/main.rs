fn main() {
    std::process::exit(nlhomog::cli::run(std::env::args_os()));
}
