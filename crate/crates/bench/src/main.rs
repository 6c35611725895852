use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use vecbeam_bench::{emit_report, run_bench, BenchArgs, BenchError};

fn main() -> ExitCode {
    // try_parse keeps clap from exiting with its own code 2, which is ours
    // for verification failures.
    let args = match BenchArgs::try_parse() {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &BenchArgs) -> Result<(), BenchError> {
    let report = run_bench(args)?;
    for r in &report.rows {
        eprintln!(
            "{:?} S={} W={}: {:.3}s (min {:.3}, max {:.3}), rtf {:.4}, speedup {}",
            r.engine,
            r.batch,
            r.workers,
            r.total_seconds,
            r.min_seconds,
            r.max_seconds,
            r.rtf,
            r.speedup.map_or("-".into(), |s| format!("{s:.2}x")),
        );
    }
    let bytes = emit_report(&report, args.report);
    match &args.out {
        Some(path) => std::fs::write(path, bytes).map_err(vecbeam::Error::from)?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(vecbeam::Error::from)?,
    }
    Ok(())
}
