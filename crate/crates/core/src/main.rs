fn main() {
    std::process::exit(diperf::cli::main());
}
