fn main() {
    let filter = std::env::var("QORSEEK_LOG").unwrap_or_else(|_| "error".into());
    env_logger::Builder::new().parse_filters(&filter).init();
    std::process::exit(qorseek_cli::main_with_args(std::env::args_os()));
}
