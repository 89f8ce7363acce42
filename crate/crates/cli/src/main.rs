use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use zomopi::estimator::{RgeConfig, SubspaceState};
use zomopi::harness::{
    compare_budget_to_target, load_trajectories, render_table, run_experiment, spectrum_report, write_table_csv,
    ExperimentConfig, OptimizerSpec,
};
use zomopi::linalg::RngStream;
use zomopi::selftest::{run_criterion, CRITERIA};

#[derive(Parser)]
#[command(name = "zomopi", version, about = "Zeroth-order matrix optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one trajectory CSV per seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write first- and zeroth-order gradient spectra at the starting point.
    Spectrum {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Queries-to-target table over every trajectory CSV in a directory.
    Compare {
        dir: PathBuf,
        #[arg(long)]
        target: f64,
        /// Where to write the CSV table (default: <dir>/compare.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the acceptance criteria (all, or the listed numbers).
    Selftest { criteria: Vec<u8> },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write zero in the wall-time column.
    #[arg(long)]
    no_wall_time: bool,
}

impl Overrides {
    fn load(&self, path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(e) = self.eval_every {
            cfg.eval_every = e;
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        if self.no_wall_time {
            cfg.record_wall_time = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cfg: &ExperimentConfig) -> Result<bool> {
    let res = run_experiment(cfg)?;
    let dir = cfg.output_dir();
    res.write(&dir)?;
    for t in &res.trials {
        let last = t.final_record();
        let status = match &t.status {
            zomopi::harness::TrialStatus::Ok => "ok".to_string(),
            zomopi::harness::TrialStatus::Failed(m) => format!("FAILED: {m}"),
        };
        println!(
            "{} seed {}: {} steps, {} queries, eval loss {:.6e}  {status}",
            res.method(),
            t.seed,
            last.step,
            last.queries,
            last.eval_loss
        );
    }
    println!(
        "wrote {}",
        dir.join(format!("{}__{}__*.csv", res.method(), res.hash)).display()
    );
    Ok(res.all_succeeded())
}

fn spectrum(cfg: &ExperimentConfig) -> Result<()> {
    let (mu, n_queries, sub) = match cfg.optimizer {
        OptimizerSpec::ZoMopi(c) => (c.mu, c.n_queries, Some((c.r, c.nu))),
        OptimizerSpec::ZoMuon(c) => (c.mu, c.n_queries, Some((c.r, c.nu))),
        OptimizerSpec::Mezo(c) => (c.mu, c.n_queries, None),
        OptimizerSpec::FoMuon(_) => bail!("spectrum needs a zeroth-order optimizer"),
    };
    let rge = RgeConfig::new(mu, n_queries)?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    println!("seed  tail_mass_fo  tail_mass_zo  degenerate");
    for &seed in &cfg.seeds {
        let p = cfg.problem(seed)?;
        let (m, _) = p.x0.shape();
        let sub = sub
            .map(|(r, nu)| SubspaceState::new(m, r, nu, RngStream::new(seed, 1)))
            .transpose()?;
        let mut rng = RngStream::new(seed, 3);
        let rep = spectrum_report(p.objective.as_ref(), &p.x0, 0, sub.as_ref(), &rge, &mut rng)?;
        let path = dir.join(format!("{}__{}__spectrum{seed}.csv", cfg.optimizer.name(), cfg.hash()));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["index", "fo_sigma", "zo_sigma"])?;
        for (i, (f, z)) in rep.fo_sigma.iter().zip(&rep.zo_sigma).enumerate() {
            w.write_record([i.to_string(), format!("{f:.16e}"), format!("{z:.16e}")])?;
        }
        w.flush()?;
        println!(
            "{seed:>4}  {:>12.6}  {:>12.6}  {}",
            rep.tail_mass_fo, rep.tail_mass_zo, rep.degenerate
        );
    }
    Ok(())
}

fn compare(dir: &Path, target: f64, csv_path: Option<PathBuf>) -> Result<()> {
    let runs = load_trajectories(dir)?;
    if runs.is_empty() {
        bail!("no trajectory CSVs in {}", dir.display());
    }
    let rows = compare_budget_to_target(&runs, target);
    print!("{}", render_table(&rows, target));
    let out = csv_path.unwrap_or_else(|| dir.join("compare.csv"));
    write_table_csv(&rows, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn selftest(ids: &[u8]) -> Result<bool> {
    let mut ok = true;
    for &(id, ..) in CRITERIA.iter().filter(|c| ids.is_empty() || ids.contains(&c.0)) {
        let out = run_criterion(id)?;
        println!("{out}");
        ok &= out.passed || !out.blocking;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => overrides.load(&config).and_then(|c| run(&c)),
        Command::Spectrum { config, overrides } => overrides.load(&config).and_then(|c| spectrum(&c)).map(|_| true),
        Command::Compare { dir, target, csv } => compare(&dir, target, csv).map(|_| true),
        Command::Selftest { criteria } => selftest(&criteria),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
