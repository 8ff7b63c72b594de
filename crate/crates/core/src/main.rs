use std::io::{stderr, stdout};
use std::panic;
use std::process::ExitCode;

use cafcn::cli::{run, EXIT_INTERNAL};

fn main() -> ExitCode {
    let code = panic::catch_unwind(|| {
        run(
            std::env::args_os(),
            &mut stdout().lock(),
            &mut stderr().lock(),
        )
    })
    .unwrap_or(EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
