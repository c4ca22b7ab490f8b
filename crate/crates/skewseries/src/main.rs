use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use skewseries::harness::{self, Cmd};

/// Certified-truncation checks for bounded skew power series rings.
#[derive(Parser, Debug)]
#[command(name = "skewseries", version, about)]
struct Cli {
    /// Path to a session config (JSON, schema `skewseries-config-1`).
    #[arg(long)]
    config: PathBuf,

    /// Command: cert | mul | decompose | crossed | reduce | selftest.
    #[arg(long)]
    cmd: String,

    /// Seed override; defaults to the `seeds` value in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Write the byte-stable JSON report here.
    #[arg(long)]
    json_out: Option<PathBuf>,

    /// Number of suites to run concurrently (selftest only).
    #[arg(long, default_value_t = 1)]
    parallel: usize,

    /// Step budget for the reduction searches.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();

    let fail = |msg: String, code: i32| {
        eprintln!("skewseries: {msg}");
        ExitCode::from(code as u8)
    };

    let cmd = match Cmd::parse(&cli.cmd) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string(), harness::exit_code(&e)),
    };
    let bytes = match std::fs::read(&cli.config) {
        Ok(b) => b,
        Err(e) => return fail(format!("cannot read {}: {e}", cli.config.display()), 2),
    };
    let session = match harness::load_config(&bytes) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string(), harness::exit_code(&e)),
    };
    let seed = cli.seed.unwrap_or(session.seed);

    let (report, code) = harness::run(cmd, &session, seed, cli.budget, cli.parallel);

    for suite in &report.suites {
        let status = if suite.pass { "pass" } else { "FAIL" };
        println!("[{status}] {} ({} ms)", suite.name, suite.wall_ms);
        for line in &suite.detail {
            println!("    {line}");
        }
        for w in &suite.witnesses {
            println!("    witness: {w}");
        }
    }
    println!(
        "{}: {} in {} ms ({})",
        report.command,
        if report.pass { "all suites passed" } else { "failures detected" },
        start.elapsed().as_millis(),
        harness::version_banner()
    );

    if let Some(path) = &cli.json_out {
        let rendered = harness::render_report(&report);
        if let Err(e) = std::fs::write(path, rendered) {
            return fail(format!("cannot write {}: {e}", path.display()), 2);
        }
    }

    ExitCode::from(code as u8)
}
