use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use encludl::datagen::{generate, read_dataset, write_dataset, ScenarioConfig};
use encludl::error::{Error, Result};
use encludl_cli::config::{ExperimentSpec, Method, Sweep, SweepParameter};
use encludl_cli::experiment::{run_central_scenario, run_single, run_sweep, RunReport};
use encludl_cli::exit_code;
use encludl_cli::output::{write_report, write_single};

#[derive(Parser)]
#[command(name = "encludl", version, about = "Clustered inference simulations on spatial designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and cluster count on the central scenario.
    Central(RunArgs),
    /// Repeat the experiment while varying one scenario parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter to vary: sigma_eps, n, rho or h.
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated values of the swept parameter.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run one method on a stored dataset.
    Single {
        #[command(flatten)]
        run: RunArgs,
        /// Directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "encludl")]
        method: String,
    },
    /// Simulate one dataset and write it to disk.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        edge: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        sigma_eps: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment specification (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',')]
    clusters: Option<Vec<usize>>,
    #[arg(long)]
    bootstraps: Option<usize>,
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Comma-separated methods: cludl, dlasso-full, encludl.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Write every p-value family.
    #[arg(long)]
    keep_pvalues: bool,
    /// Leave wall-clock columns as NA so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.workers {
            spec.workers = Some(v);
        }
        if let Some(v) = &self.out {
            spec.output_dir = v.clone();
        }
        if let Some(v) = self.alpha {
            spec.alpha = v;
        }
        if let Some(v) = self.gamma {
            spec.gamma = v;
        }
        if let Some(v) = &self.clusters {
            spec.c_grid = v.clone();
        }
        if let Some(v) = self.bootstraps {
            spec.n_bootstraps = v;
        }
        if let Some(v) = self.n_seeds {
            spec.n_seeds = v;
        }
        if let Some(v) = &self.methods {
            spec.methods = v.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        spec.keep_pvalues |= self.keep_pvalues;
        if self.no_timing {
            spec.timing = false;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn finish_report(spec: &ExperimentSpec, report: &RunReport) -> Result<bool> {
    write_report(&spec.output_dir, spec, report)?;
    let failed = report.failed_rows();
    eprintln!(
        "wrote {} rows to {} ({failed} failed)",
        report.rows.len(),
        spec.output_dir.join("summary.csv").display()
    );
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("  {} {} C={}: {}", row.scenario_id, row.method, row.n_clusters, row.error.as_deref().unwrap_or(""));
    }
    Ok(failed == 0)
}

fn gen_data(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    edge: Option<usize>,
    rho: Option<f64>,
    sigma_eps: Option<f64>,
) -> Result<()> {
    let mut scenario = match config {
        Some(path) => ExperimentSpec::load(path)?.scenario,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = seed {
        scenario.seed = v;
    }
    if let Some(v) = n {
        scenario.n_samples = v;
    }
    if let Some(v) = edge {
        scenario.edge = v;
    }
    if let Some(v) = rho {
        scenario.rho = v;
    }
    if let Some(v) = sigma_eps {
        scenario.sigma_eps = v;
    }
    scenario.validate()?;
    let (data, design) = generate(&scenario)?;
    write_dataset(out, &data, Some(&scenario), Some(design.achieved_rho))?;
    eprintln!(
        "wrote {}x{} design to {} (rho {:.3}, snr {:.2})",
        data.x.nrows(),
        data.x.ncols(),
        out.display(),
        design.achieved_rho,
        data.snr
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Central(args) => {
            let spec = args.spec()?;
            let report = run_central_scenario(&spec)?;
            finish_report(&spec, &report)
        }
        Command::Sweep { run, parameter, values } => {
            let mut spec = run.spec()?;
            match (parameter, values) {
                (Some(p), Some(v)) => {
                    let parameter: SweepParameter = p.parse()?;
                    spec.sweep = Some(Sweep { parameter, values: v });
                }
                (None, None) => {}
                _ => return Err(Error::Config("--parameter and --values must be given together".into())),
            }
            if spec.sweep.is_none() {
                return Err(Error::Config("no sweep configured; pass --parameter and --values".into()));
            }
            spec.validate()?;
            let report = run_sweep(&spec)?;
            finish_report(&spec, &report)
        }
        Command::Single { run, data, method } => {
            let spec = run.spec()?;
            let method: Method = method.parse()?;
            let dataset = read_dataset(&data)?;
            let n_clusters = match method {
                Method::DlassoFull => dataset.x.ncols(),
                _ => match spec.c_grid.as_slice() {
                    [c] => *c,
                    _ => return Err(Error::Config("single runs take exactly one cluster count".into())),
                },
            };
            let domain = dataset.weight_map.domain().clone();
            let result = run_single(&dataset.x, &dataset.y, &domain, method, n_clusters, &spec)?;
            write_single(&spec.output_dir, &spec, &result)?;
            eprintln!(
                "{method} C={}: {} covariates selected, delta {}",
                result.n_clusters,
                result.selected.len(),
                result.output.delta
            );
            Ok(true)
        }
        Command::GenData { config, out, seed, n, edge, rho, sigma_eps } => {
            gen_data(config.as_deref(), &out, seed, n, edge, rho, sigma_eps)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
