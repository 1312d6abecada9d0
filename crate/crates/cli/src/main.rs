//! Command-line front end: single runs, the campaign matrix, the analytic
//! certificate, and re-scoring of stored traces.
//!
//! Exit codes: 0 all pass, 1 gate or threshold failure, 2 run error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slungload::analysis::{certify, CertificateInputs};
use slungload::campaign::{matrix, rescore, run_campaign, simulate, variant, write_run, RunConfig, GROUPS};
use slungload::metrics::RunMetrics;

#[derive(Parser)]
#[command(name = "slungload", version, about = "Multi-drone slung-load simulator and fault-tolerance campaign")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration (TOML file or a built-in variant tag).
    Run {
        #[arg(long, conflicts_with = "variant")]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
        /// Store the trace at every physics tick instead of 100 Hz.
        #[arg(long)]
        full_rate: bool,
    },
    /// Run the campaign matrix (or selected groups) in parallel.
    Campaign {
        #[arg(long, default_value = "out/campaign")]
        out: PathBuf,
        /// Comma-separated subset of: V, P2-A, P2-B, P2-C, P2-D, probe, dwell, gamma.
        #[arg(long, value_delimiter = ',')]
        select: Option<Vec<String>>,
        #[arg(long)]
        full_rate: bool,
    },
    /// Print the analytic stability certificate as JSON.
    Certify {
        /// Optional TOML file overriding certificate inputs.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Print the admissibility gates of a stored run.
    Gates { dir: PathBuf },
    /// Recompute metrics from a stored run's config and trace.
    Metrics {
        dir: PathBuf,
        /// Write the result back to metrics.json.
        #[arg(long)]
        write: bool,
    },
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), serde_json::Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, variant: tag, out, full_rate } => {
            let cfg = match (config, tag) {
                (Some(path), _) => fs::read_to_string(&path).map_err(slungload::Error::from).and_then(|t| RunConfig::from_toml(&t)),
                (None, Some(tag)) => variant(&tag),
                (None, None) => variant("V1"),
            };
            let cfg = match cfg {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let art = match simulate(&cfg) {
                Ok(a) => a,
                Err(e) => return fail(e),
            };
            let rec = match write_run(&out, &cfg.tag, "single", &art, full_rate) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            log::info!("wrote {} (hash {})", out.display(), rec.hash);
            if let Err(e) = print_json(&art.metrics) {
                return fail(e);
            }
            if let Some(f) = &art.failure {
                return fail(f);
            }
            verdict(art.metrics.pass())
        }
        Cmd::Campaign { out, select, full_rate } => {
            if let Some(sel) = &select {
                if let Some(bad) = sel.iter().find(|g| !GROUPS.contains(&g.as_str())) {
                    return fail(format!("unknown group {bad}"));
                }
            }
            let runs = match matrix(select.as_deref()) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            log::info!("running {} configurations", runs.len());
            let summary = match run_campaign(&runs, Some(&out), full_rate) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            println!("{}", summary.render());
            if summary.any_failure() {
                return ExitCode::from(2);
            }
            let core_pass = summary.group("V").all(|r| r.metrics.as_ref().is_some_and(RunMetrics::pass));
            verdict(core_pass)
        }
        Cmd::Certify { inputs } => {
            let inp = match inputs {
                Some(p) => match fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|t| toml::from_str::<CertificateInputs>(&t).map_err(|e| e.to_string())) {
                    Ok(i) => i,
                    Err(e) => return fail(e),
                },
                None => CertificateInputs::default(),
            };
            match certify(&inp) {
                Ok(c) => match print_json(&c) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(e),
                },
                Err(e) => fail(e),
            }
        }
        Cmd::Gates { dir } => match rescore(&dir) {
            Ok(m) => {
                if let Err(e) = print_json(&m.gates) {
                    return fail(e);
                }
                verdict(m.gates.pass())
            }
            Err(e) => fail(e),
        },
        Cmd::Metrics { dir, write } => match rescore(&dir) {
            Ok(m) => {
                let text = match serde_json::to_string_pretty(&m) {
                    Ok(t) => t,
                    Err(e) => return fail(e),
                };
                if write {
                    if let Err(e) = fs::write(dir.join("metrics.json"), &text) {
                        return fail(e);
                    }
                }
                println!("{text}");
                verdict(m.pass())
            }
            Err(e) => fail(e),
        },
    }
}
