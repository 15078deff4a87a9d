fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(thinnet::cli::main_with(&argv));
}
