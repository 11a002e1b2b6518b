use std::process::exit;

fn main() {
    exit(inpcc::harness::cli::run(std::env::args_os()));
}
