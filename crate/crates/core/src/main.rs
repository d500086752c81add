fn main() {
    std::process::exit(vulnclf::cli::main());
}
