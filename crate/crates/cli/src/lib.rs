//! `palmpipe` command-line tool: dataset generation, training, pipeline
//! runs, the machine-observer study, latency benchmarks and the sandbox
//! server.

pub mod args;
pub mod commands;
pub mod serve;
pub mod settings;
pub mod wire;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

/// Bad invocation: exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv`, runs the subcommand and returns the process exit status.
/// Normal output goes to `out`, diagnostics to stderr.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        let mut sink = Vec::new();
        main_with(std::iter::once("palmpipe").chain(args.iter().copied()), &mut sink)
    }

    #[test]
    fn argument_errors_exit_with_two() {
        assert_eq!(code(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(code(&["train", "--data", "x", "--out", "y", "--epochs", "0"]), EXIT_USAGE);
        assert_eq!(code(&["run", "--mode", "masked", "--duration", "0.1"]), EXIT_USAGE);
        assert_eq!(code(&["run", "--mode", "sideways"]), EXIT_USAGE);
        assert_eq!(code(&["study", "--ckpt", "x", "--trials", "0"]), EXIT_USAGE);
        assert_eq!(code(&["study"]), EXIT_USAGE);
        assert_eq!(code(&["gen", "--out", "x", "--n-reps", "0"]), EXIT_USAGE);
        assert_eq!(code(&["--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.ckpt");
        assert_eq!(code(&["study", "--ckpt", missing.to_str().unwrap(), "--trials", "1"]), EXIT_RUNTIME);
        let unwritable = dir.path().join("no/such/dir/data.csv");
        assert_eq!(code(&["gen", "--out", unwritable.to_str().unwrap(), "--n-reps", "1"]), EXIT_RUNTIME);
    }

    #[test]
    fn bad_config_file_is_an_argument_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "colour = blue\n").unwrap();
        let out = dir.path().join("d.csv");
        assert_eq!(
            code(&["--config", cfg.to_str().unwrap(), "gen", "--out", out.to_str().unwrap()]),
            EXIT_USAGE
        );
    }
}
