fn main() {
    std::process::exit(deblur::cli::run(std::env::args_os()));
}
