fn main() {
    env_logger::init();
    std::process::exit(bicnn::cli::run());
}
