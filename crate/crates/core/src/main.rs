fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(etlqg_core::cli::run_cli(&args));
}
