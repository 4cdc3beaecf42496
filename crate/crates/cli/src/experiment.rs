//! Monte-Carlo harness: repeated simulations per (method, C), summary rows
//! and per-run records.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use encludl::cluster::{clustering_diameter, compress, transformation_matrix, ward_constrained, Clustering};
use encludl::datagen::{generate, scenario_weight_map, ScenarioConfig};
use encludl::dlasso::diagnostics;
use encludl::error::{Error, Result};
use encludl::grid::{SpatialDomain, WeightMap};
use encludl::metrics::{summarize, RunOutcome, Summary};
use encludl::pipeline::{bonferroni, cludl, cluster_inference, degroup, encludl, select, EnsembleConfig, PValueFamily};
use encludl::rng::{derive_seed, stream};

use crate::config::{ExperimentSpec, Method};

/// Output of one method on one dataset.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub family: PValueFamily,
    /// Declared spatial tolerance: the largest clustering diameter used.
    pub delta: f64,
    /// Diameter of every clustering used, in bootstrap order.
    pub diameters: Vec<f64>,
    /// Smallest eigenvalue of `ZᵀZ/n` for single-clustering runs.
    pub phi_min_hat: Option<f64>,
}

pub fn ensemble_config(spec: &ExperimentSpec, n_clusters: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        n_clusters,
        n_bootstraps: spec.n_bootstraps,
        gamma: spec.gamma,
        subsample_fraction: spec.subsample_fraction,
        inference: spec.inference.clone(),
        seed,
    }
}

/// Runs `method` once. `n_clusters` is ignored by the full-design baseline.
pub fn run_method(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    domain: &SpatialDomain,
    method: Method,
    n_clusters: usize,
    spec: &ExperimentSpec,
    seed: u64,
) -> Result<MethodOutput> {
    match method {
        Method::DlassoFull => {
            let family = cludl(x, y, &Clustering::singletons(domain.clone()), &spec.inference)?;
            Ok(MethodOutput {
                family,
                delta: 0.0,
                diameters: vec![0.0],
                phi_min_hat: None,
            })
        }
        Method::Cludl => {
            let clustering = ward_constrained(x, domain, n_clusters)?;
            let z = compress(x, &transformation_matrix(&clustering))?;
            let raw = cluster_inference(&z, y, &spec.inference)?;
            let family = degroup(&bonferroni(&raw)?, &clustering)?;
            let delta = clustering_diameter(&clustering);
            Ok(MethodOutput {
                family,
                delta,
                diameters: vec![delta],
                phi_min_hat: Some(diagnostics(&z).phi_min_hat),
            })
        }
        Method::Encludl => {
            let res = encludl(x, y, domain, &ensemble_config(spec, n_clusters, seed))?;
            Ok(MethodOutput {
                family: res.family,
                delta: res.delta,
                diameters: res.diameters,
                phi_min_hat: None,
            })
        }
    }
}

/// One (method, C) cell of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Task {
    pub method: Method,
    /// Cluster count; the covariate count for the full-design baseline.
    pub n_clusters: usize,
}

/// Cells in output order: method name, then C.
pub fn task_list(spec: &ExperimentSpec) -> Vec<Task> {
    let p = spec.scenario.edge * spec.scenario.edge;
    let mut tasks = Vec::new();
    for &method in &spec.methods {
        if method == Method::DlassoFull {
            tasks.push(Task { method, n_clusters: p });
        } else {
            let mut grid = spec.c_grid.clone();
            grid.sort_unstable();
            grid.dedup();
            tasks.extend(grid.into_iter().map(|c| Task { method, n_clusters: c }));
        }
    }
    tasks.sort();
    tasks
}

/// Record of one repetition of one cell.
#[derive(Debug, Clone)]
pub struct SeedRecord {
    pub index: usize,
    pub seed: u64,
    pub selected: Vec<usize>,
    pub delta: f64,
    pub diameters: Vec<f64>,
    pub phi_min_hat: Option<f64>,
    pub wall_time_s: f64,
    pub pvalues: Option<Vec<f64>>,
}

/// All repetitions of one cell under one scenario.
#[derive(Debug, Clone)]
pub struct TaskResult {
    pub scenario_id: String,
    pub sweep_value: Option<f64>,
    pub task: Task,
    pub truth: WeightMap,
    pub records: Vec<SeedRecord>,
    /// First failure, with its repetition index.
    pub error: Option<String>,
}

impl TaskResult {
    /// Shared tolerance of the cell: the largest per-repetition δ.
    pub fn delta(&self) -> f64 {
        self.records.iter().map(|r| r.delta).fold(0.0, f64::max)
    }

    pub fn outcomes(&self, alpha: f64) -> Vec<RunOutcome> {
        let delta = self.delta();
        self.records
            .iter()
            .map(|r| RunOutcome::new(r.selected.clone(), &self.truth, alpha, delta))
            .collect()
    }

    pub fn wall_time_s(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time_s).sum()
    }
}

/// One line of the summary CSV.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub sweep_value: Option<f64>,
    pub method: Method,
    pub n_clusters: usize,
    pub n_bootstraps: Option<usize>,
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub delta: Option<f64>,
    pub n_seeds: usize,
    pub summary: Option<Summary>,
    pub wall_time_s: Option<f64>,
    pub config_hash: String,
    pub master_seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<SummaryRow>,
    pub tasks: Vec<TaskResult>,
    pub config_hash: String,
    pub master_seed: u64,
    pub repetition_seeds: Vec<u64>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn task(&self, method: Method, n_clusters: usize) -> Option<&TaskResult> {
        self.tasks
            .iter()
            .find(|t| t.task.method == method && t.task.n_clusters == n_clusters)
    }
}

pub fn repetition_seeds(spec: &ExperimentSpec) -> Vec<u64> {
    (0..spec.n_seeds as u64).map(|i| derive_seed(spec.seed, stream::REPETITION, i)).collect()
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

type SeedResult = std::result::Result<SeedRecord, String>;

fn run_repetition(spec: &ExperimentSpec, scenario: &ScenarioConfig, tasks: &[Task], index: usize, seed: u64) -> Vec<SeedResult> {
    let config = ScenarioConfig {
        seed,
        ..scenario.clone()
    };
    let data = match generate(&config).and_then(|(d, _)| Ok((config.domain()?, d))) {
        Ok(v) => v,
        Err(e) => return tasks.iter().map(|_| Err(format!("repetition {index}: {e}"))).collect(),
    };
    let (domain, data) = data;
    tasks
        .iter()
        .map(|task| {
            let start = Instant::now();
            let out = run_method(&data.x, &data.y, &domain, task.method, task.n_clusters, spec, seed)
                .map_err(|e| format!("repetition {index}: {e}"))?;
            let wall_time_s = start.elapsed().as_secs_f64();
            let selected = select(&out.family, spec.alpha).map_err(|e| e.to_string())?;
            Ok(SeedRecord {
                index,
                seed,
                selected,
                delta: out.delta,
                diameters: out.diameters,
                phi_min_hat: out.phi_min_hat,
                wall_time_s,
                pvalues: spec.keep_pvalues.then(|| out.family.into_values()),
            })
        })
        .collect()
}

fn run_block(spec: &ExperimentSpec, scenario: &ScenarioConfig, scenario_id: &str, sweep_value: Option<f64>) -> Result<Vec<TaskResult>> {
    let tasks = task_list(spec);
    let truth = scenario_weight_map(scenario)?;
    let seeds = repetition_seeds(spec);
    let per_seed: Vec<Vec<SeedResult>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_repetition(spec, scenario, &tasks, i, s))
        .collect();

    Ok(tasks
        .iter()
        .enumerate()
        .map(|(t, &task)| {
            let mut records = Vec::with_capacity(seeds.len());
            let mut error = None;
            for results in &per_seed {
                match &results[t] {
                    Ok(r) => records.push(r.clone()),
                    Err(e) => {
                        error.get_or_insert_with(|| e.clone());
                    }
                }
            }
            TaskResult {
                scenario_id: scenario_id.to_string(),
                sweep_value,
                task,
                truth: truth.clone(),
                records,
                error,
            }
        })
        .collect())
}

fn summary_row(spec: &ExperimentSpec, result: &TaskResult, config_hash: &str) -> SummaryRow {
    let method = result.task.method;
    let ensemble = method == Method::Encludl;
    let mut error = result.error.clone();
    let summary = if error.is_none() {
        match summarize(&result.outcomes(spec.alpha)) {
            Ok(s) => Some(s),
            Err(e) => {
                error = Some(e.to_string());
                None
            }
        }
    } else {
        None
    };
    SummaryRow {
        scenario_id: result.scenario_id.clone(),
        sweep_value: result.sweep_value,
        method,
        n_clusters: result.task.n_clusters,
        n_bootstraps: ensemble.then_some(spec.n_bootstraps),
        gamma: ensemble.then_some(spec.gamma),
        alpha: spec.alpha,
        delta: error.is_none().then(|| result.delta()),
        n_seeds: spec.n_seeds,
        summary,
        wall_time_s: spec.timing.then(|| result.wall_time_s()),
        config_hash: config_hash.to_string(),
        master_seed: spec.seed,
        error,
    }
}

fn finish(spec: &ExperimentSpec, mut tasks: Vec<TaskResult>, started: Instant) -> RunReport {
    let hash = spec.config_hash();
    tasks.sort_by(|a, b| {
        (a.task.method, a.task.n_clusters)
            .cmp(&(b.task.method, b.task.n_clusters))
            .then(a.sweep_value.unwrap_or(0.0).total_cmp(&b.sweep_value.unwrap_or(0.0)))
    });
    let rows = tasks.iter().map(|t| summary_row(spec, t, &hash)).collect();
    RunReport {
        rows,
        tasks,
        config_hash: hash,
        master_seed: spec.seed,
        repetition_seeds: repetition_seeds(spec),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Runs every (method, C) cell of the spec on its scenario.
pub fn run_central_scenario(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let started = Instant::now();
    let tasks = with_pool(spec.workers, || run_block(spec, &spec.scenario, "central", None))??;
    Ok(finish(spec, tasks, started))
}

/// Runs the spec once per sweep value, each time overriding one scenario
/// parameter.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let Some(sweep) = &spec.sweep else {
        return Err(Error::Config("no sweep configured".into()));
    };
    let started = Instant::now();
    let tasks = with_pool(spec.workers, || -> Result<Vec<TaskResult>> {
        let mut all = Vec::new();
        for &value in &sweep.values {
            let scenario = sweep.parameter.apply(&spec.scenario, value)?;
            let id = format!("{}={}", sweep.parameter.name(), value);
            all.extend(run_block(spec, &scenario, &id, Some(value))?);
        }
        Ok(all)
    })??;
    Ok(finish(spec, tasks, started))
}

/// Single run of one method on one dataset.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub method: Method,
    pub n_clusters: usize,
    pub output: MethodOutput,
    pub selected: Vec<usize>,
    pub wall_time_s: f64,
}

pub fn run_single(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    domain: &SpatialDomain,
    method: Method,
    n_clusters: usize,
    spec: &ExperimentSpec,
) -> Result<SingleRun> {
    spec.inference.validate()?;
    if x.ncols() != domain.len() || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, target {}, grid {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            domain.len()
        )));
    }
    let start = Instant::now();
    let output = run_method(x, y, domain, method, n_clusters, spec, spec.seed)?;
    let selected = select(&output.family, spec.alpha)?;
    let n_clusters = if method == Method::DlassoFull { domain.len() } else { n_clusters };
    Ok(SingleRun {
        method,
        n_clusters,
        output,
        selected,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
