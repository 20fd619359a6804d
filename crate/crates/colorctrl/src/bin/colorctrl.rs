//! Thin wrapper over the library CLI.

use std::process::ExitCode;

fn main() -> ExitCode {
    colorctrl::cli::main()
}
