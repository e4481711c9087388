fn main() {
    std::process::exit(subunit_cnn::cli::run(std::env::args_os()));
}
