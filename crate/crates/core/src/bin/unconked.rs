fn main() {
    std::process::exit(unconked::cli::run(std::env::args_os()));
}
