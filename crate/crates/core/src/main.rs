fn main() {
    std::process::exit(ltadapt::cli::main());
}
