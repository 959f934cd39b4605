use std::process::exit;

fn main() {
    exit(pms_core::cli::run_cli(std::env::args_os()));
}
