fn main() {
    std::process::exit(blobsim::harness::cli_main(std::env::args()));
}
