use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rbaca_core::harness::{self, RunConfig, RunReport, Runner};
use rbaca_core::memory::write_snapshot;
use rbaca_core::metrics::{bwt, fwt, il_score, PerformanceMatrix};
use rbaca_core::stream::export_dir;
use rbaca_core::{Error, Real, Result};

#[derive(Parser)]
#[command(name = "rbaca", version, about = "Continual active learning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic stream and write it as CSV files.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Data seed (defaults to the first run seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the continual pipeline.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        runner: Option<RunnerArg>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a reference baseline.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Recompute BWT, FWT and IL-Score from a saved matrix CSV.
    Report {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// List preset names.
    Presets,
    /// Print the resolved configuration in config-file form.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for report.txt, report.jsonl, matrices and memory snapshots.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerArg {
    Rbaca,
    Casa,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Seqfinetune,
    Contexteval,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(p), _) => harness::preset(p)?,
            (None, Some(path)) => RunConfig::from_file(path)?,
            (None, None) => harness::config::desk_base(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    let mut w = BufWriter::new(File::create(dir.join("report.jsonl"))?);
    report.write_jsonl(&mut w)?;
    w.flush()?;
    for s in &report.seeds {
        let mut w = BufWriter::new(File::create(dir.join(format!("matrix-seed{}.csv", s.seed)))?);
        s.matrix.write_csv(&mut w)?;
        w.flush()?;
        if !s.memory.is_empty() {
            let mut w = BufWriter::new(File::create(dir.join(format!("memory-seed{}.csv", s.seed)))?);
            write_snapshot(&s.memory, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit(report: &RunReport, out: &OutArgs) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(dir) = &out.out {
        write_outputs(report, dir)?;
    }
    Ok(())
}

fn run_cmd<T: Real>(cfg: &RunConfig, runner: Option<RunnerArg>, out: &OutArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    match runner {
        Some(RunnerArg::Rbaca) => cfg.runner = Runner::Rbaca,
        Some(RunnerArg::Casa) => cfg.runner = Runner::Casa,
        None => {}
    }
    let report = harness::run_configured::<T>(&cfg)?;
    emit(&report, out)
}

fn baseline_cmd<T: Real>(cfg: &RunConfig, kind: BaselineKind, out: &OutArgs) -> Result<()> {
    match kind {
        BaselineKind::Seqfinetune => emit(&harness::run_seqfinetune::<T>(cfg)?, out),
        BaselineKind::Contexteval => {
            let r = harness::run_contexteval::<T>(cfg)?;
            for (seed, rounds) in r.seeds.iter().zip(&r.rounds) {
                let cells: Vec<String> = rounds.iter().map(|v| format!("{v:.4}")).collect();
                println!("seed {seed}: {}", cells.join(" "));
            }
            println!("FWT {:.4} ± {:.4}", r.fwt.mean, r.fwt.std);
            if let Some(dir) = &out.out {
                fs::create_dir_all(dir)?;
                let line = serde_json_line(&r)?;
                fs::write(dir.join("contexteval.jsonl"), line)?;
            }
            Ok(())
        }
    }
}

fn serde_json_line(r: &harness::ContextEvalReport) -> Result<String> {
    let mut buf = Vec::new();
    r.write_jsonl(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn report_cmd(path: &Path) -> Result<()> {
    let m = PerformanceMatrix::read_csv(BufReader::new(File::open(path)?), path)?;
    let b = bwt(&m)?;
    let f = fwt(&m)?;
    let metric = m.final_average();
    println!("contexts {}", m.t());
    println!("BWT {b:.6}");
    println!("FWT {f:.6}");
    println!("metric {metric:.6}");
    println!("IL-Score {:.6}", il_score(metric, b, f)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { cfg, seed, out } => {
            let c = cfg.resolve()?;
            let seed = seed.or(c.data_seed).unwrap_or(c.seeds[0]);
            let mut s = c.stream.clone();
            s.seed = seed;
            match cfg.precision {
                Precision::F64 => export_dir(&rbaca_core::stream::generate::<f64>(&s)?, &out)?,
                Precision::F32 => export_dir(&rbaca_core::stream::generate::<f32>(&s)?, &out)?,
            }
            println!("wrote base.csv, stream.csv, val.csv, test.csv to {}", out.display());
            Ok(())
        }
        Cmd::Run { cfg, runner, out } => {
            let c = cfg.resolve()?;
            match cfg.precision {
                Precision::F64 => run_cmd::<f64>(&c, runner, &out),
                Precision::F32 => run_cmd::<f32>(&c, runner, &out),
            }
        }
        Cmd::Baseline { kind, cfg, out } => {
            let c = cfg.resolve()?;
            match cfg.precision {
                Precision::F64 => baseline_cmd::<f64>(&c, kind, &out),
                Precision::F32 => baseline_cmd::<f32>(&c, kind, &out),
            }
        }
        Cmd::Report { matrix } => report_cmd(&matrix),
        Cmd::Presets => {
            for p in harness::preset_names() {
                println!("{p}");
            }
            Ok(())
        }
        Cmd::ShowConfig { cfg } => {
            print!("{}", cfg.resolve()?.to_config_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvariantBreach { .. }) => {
            eprintln!("invariant breach: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
