fn main() {
    std::process::exit(hoi_fusion::cli::run(std::env::args_os()));
}
