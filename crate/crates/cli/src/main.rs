use std::io::{stderr, stdin, stdout};

fn main() {
    let code = econ_cli::run_cli(std::env::args_os(), stdin().lock(), &mut stdout(), &mut stderr());
    std::process::exit(code);
}
