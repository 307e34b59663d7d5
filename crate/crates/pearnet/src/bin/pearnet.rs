fn main() {
    std::process::exit(pearnet::cli::run(std::env::args_os()));
}
