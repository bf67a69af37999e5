fn main() {
    std::process::exit(rectiflow::cli::run(std::env::args_os()));
}
