use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqratio::config::{design_report, estimate_report, OneOrMany, Settings};
use seqratio::design::DesignParams;
use seqratio::error::{Error, Result};
use seqratio::estimators::{estimate, AuxStreams};
use seqratio::group::{estimate_grouped, GroupedSource};
use seqratio::sampling::{ExternalSource, SampleSource, StreamKey, SyntheticSource};
use seqratio::sim::{run_experiment, theory_rows, write_csv, write_csv_file, SummaryRow};
use seqratio::theory::SizeMode;

#[derive(Parser)]
#[command(name = "seqratio", version, about = "Two-stage sequential estimation of RR, LRR, OR and LOR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived design constants.
    Design(Common),
    /// Run the estimator once.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Read observations from stdin, writing `? i` requests to stdout.
        #[arg(long)]
        external: bool,
    },
    /// Monte Carlo simulation over a grid, written as CSV.
    Simulate(Common),
    /// Bounds and approximations over a grid, written as CSV.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Evenly spaced targets `lo,hi,count`, replacing --tarvar.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    /// Target (relative) MSE; a comma list for grids.
    #[arg(long, value_delimiter = ',')]
    tarvar: Option<Vec<f64>>,
    /// Target ratio of the two sample sizes.
    #[arg(long, conflicts_with = "groups")]
    tarsara: Option<f64>,
    /// Group sizes `m1,m2`.
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', requires = "p2", conflicts_with_all = ["ratio", "scale"])]
    p1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "p1")]
    p2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "scale")]
    ratio: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "ratio")]
    scale: Option<Vec<f64>>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the full replication count.
    #[arg(long)]
    full: bool,
    /// Maximum draws per inverse binomial sampling call.
    #[arg(long)]
    draw_cap: Option<u64>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let base = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let list = |v: &Option<Vec<f64>>| v.clone().map(OneOrMany::Many);
        let cli = Settings {
            kind: self.kind.clone(),
            tarvar: list(&self.tarvar),
            tarsara: self.tarsara,
            groups: match self.groups.as_deref() {
                None => None,
                Some(&[m1, m2]) => Some([m1, m2]),
                Some(_) => return Err(Error::config("groups", "expected m1,m2")),
            },
            p1: list(&self.p1),
            p2: list(&self.p2),
            ratio: list(&self.ratio),
            scale: list(&self.scale),
            reps: self.reps,
            seed: self.seed,
            threads: self.threads,
            out: self.out.clone(),
            full: self.full.then_some(true),
            draw_cap: self.draw_cap,
        };
        let mut merged = base.overlay(cli);
        if self.tarsara.is_some() {
            merged.groups = None;
        } else if self.groups.is_some() {
            merged.tarsara = None;
        }
        Ok(merged)
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_csv(out: Option<&PathBuf>, rows: &[SummaryRow]) -> Result<()> {
    match out {
        Some(p) => write_csv_file(rows, p),
        None => {
            if rows.is_empty() {
                return Err(Error::config("out", "no rows to write"));
            }
            write_csv(rows, io::stdout().lock())
        }
    }
}

fn single(values: Vec<f64>, field: &str) -> Result<f64> {
    match values.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::config(field, "estimate takes a single value")),
    }
}

fn run_design(s: &Settings) -> Result<()> {
    let kind = s.kind()?;
    let ratio = s.mode()?.size_ratio();
    let blocks = s
        .targets()?
        .into_iter()
        .map(|t| DesignParams::derive(kind, t, ratio).map(|d| design_report(&d)))
        .collect::<Result<Vec<_>>>()?;
    emit(s.out.as_ref(), &blocks.join("\n"))
}

fn run_estimate(s: &Settings, external: bool) -> Result<()> {
    let kind = s.kind()?;
    let target = single(s.targets()?, "tarvar")?;
    let mode = s.mode()?;
    let design = DesignParams::derive(kind, target, mode.size_ratio())?;
    let key = StreamKey::new(s.seed(), 0, 0);
    let mut aux = AuxStreams::from_key(key);
    let cap = s.draw_cap();
    let report = if external {
        let src = ExternalSource::new(io::stdin().lock(), BufWriter::new(io::stdout().lock()))
            .with_draw_cap(cap);
        run_with(src, &design, mode, &mut aux)?
    } else {
        let grid = s.grid()?;
        let [p1, p2] = match grid.as_slice() {
            [p] => *p,
            _ => return Err(Error::config("p1", "estimate takes a single pair")),
        };
        let src = SyntheticSource::from_key(p1, p2, key)?.with_draw_cap(cap);
        run_with(src, &design, mode, &mut aux)?
    };
    emit(s.out.as_ref(), &report)
}

fn run_with<S: SampleSource>(
    mut src: S,
    design: &DesignParams<f64>,
    mode: SizeMode<f64>,
    aux: &mut AuxStreams<rand_chacha::ChaCha8Rng>,
) -> Result<String> {
    match mode.groups() {
        Some(g) => {
            let mut grouped = GroupedSource::new(src, g);
            let r = estimate_grouped(design, &mut grouped, aux)?;
            Ok(estimate_report(&r.result, Some(r.usage)))
        }
        None => {
            let r = estimate(design, &mut src, aux)?;
            Ok(estimate_report(&r, None))
        }
    }
}

fn run_simulate(s: &Settings) -> Result<()> {
    let spec = s.experiment()?;
    let cells = run_experiment(&spec)?;
    let rows: Vec<SummaryRow> = cells.into_iter().map(|c| c.row).collect();
    emit_csv(s.out.as_ref(), &rows)
}

fn run_theory(s: &Settings, sweep: Option<&[f64]>) -> Result<()> {
    let targets = match sweep {
        Some(&[lo, hi, n]) => {
            if !(n >= 1.0 && n.fract() == 0.0 && lo > 0.0 && hi >= lo) {
                return Err(Error::config("sweep", "expected lo,hi,count with 0 < lo <= hi"));
            }
            let n = n as usize;
            (0..n)
                .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                .collect()
        }
        Some(_) => return Err(Error::config("sweep", "expected lo,hi,count")),
        None => s.targets()?,
    };
    let rows = theory_rows(s.kind()?, &targets, s.mode()?, &s.grid()?)?;
    emit_csv(s.out.as_ref(), &rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(c) => run_design(&c.settings()?),
        Command::Estimate { common, external } => run_estimate(&common.settings()?, external),
        Command::Simulate(c) => run_simulate(&c.settings()?),
        Command::Theory { common, sweep } => run_theory(&common.settings()?, sweep.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(l) = e.ledger() {
                let t = l.totals();
                eprintln!("draws_pop1={}\ndraws_pop2={}", t[0], t[1]);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
