fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(hali_cli::run_command(&argv));
}
