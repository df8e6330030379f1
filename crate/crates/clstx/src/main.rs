fn main() {
    std::process::exit(clstx::cli::main());
}
