use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(treehedge::cli::run_from_env())
}
