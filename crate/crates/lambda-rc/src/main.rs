fn main() {
    std::process::exit(lambda_rc::cli::run());
}
