use chernlab::config::ExperimentConfig;
use chernlab::harness::{self, exit_code, Suite};
use chernlab::Error;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Chern-harmonic map experiments: solves, verification suites and bubble trees.
#[derive(Parser)]
#[command(name = "chernlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML, dotted keys).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` and CHERNLAB_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid size N; verification ladders become N/4, N/2, N.
    #[arg(long)]
    resolution_override: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Flow the configured initial map to a Chern-harmonic map.
    Solve(Common),
    /// Run a verification suite: torsion, bochner, conformal, operators,
    /// isoperimetric, monotonicity or regularity.
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
    /// Build the bubble tree of the configured concentrating family.
    Bubble(Common),
    /// Print the header of a map snapshot as JSON.
    SnapshotInfo { path: PathBuf },
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::from_path(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.resolution_override {
        cfg.override_resolution(n);
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Solve(c) => {
            let (cfg, out) = load(&c)?;
            let o = harness::cmd_solve(&cfg, &out)?;
            println!(
                "converged={} steps={} residual={:e} energy={:e} -> {}",
                o.report.converged,
                o.report.steps_taken,
                o.final_residual,
                o.final_energy,
                out.display()
            );
            Ok(0)
        }
        Command::Verify { suite, common } => {
            let s = Suite::parse(&suite).ok_or_else(|| Error::Config(format!("unknown suite `{suite}`")))?;
            let (cfg, out) = load(&common)?;
            let o = harness::cmd_verify(&cfg, s, &out)?;
            for k in &o.checks {
                println!("{} {}: {:e} ({})", if k.passed { "ok  " } else { "FAIL" }, k.name, k.value, k.limit);
            }
            Ok(if o.passed() { 0 } else { 3 })
        }
        Command::Bubble(c) => {
            let (cfg, out) = load(&c)?;
            let o = harness::cmd_bubble(&cfg, &out)?;
            println!(
                "nodes={} depth={} identity relative={:e} distance mismatch={:e}",
                o.node_count, o.depth, o.identity.relative, o.distance.max_mismatch
            );
            for r in &o.mass_accounting {
                println!("  node {} mass={:e} energy={:e} mismatch={:e}", r.label, r.mass_in, r.energy, r.relative_mismatch);
            }
            if !o.identity_holds {
                println!("FAIL energy identity: relative error {:e} above {}", o.identity.relative, o.identity_tolerance);
                return Ok(3);
            }
            Ok(0)
        }
        Command::SnapshotInfo { path } => {
            let h = harness::snapshot_info(&path)?;
            println!("{}", serde_json::to_string_pretty(&h).map_err(|e| Error::Io(e.to_string()))?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors share the config-error status
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
