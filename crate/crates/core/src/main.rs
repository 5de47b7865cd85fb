fn main() {
    std::process::exit(prw_renewal::cli::main());
}
