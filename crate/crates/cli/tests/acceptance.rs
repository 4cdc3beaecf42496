//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Set `ACCEPTANCE_ONLY=1,4` to run a subset.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use encludl::cluster::{clustering_diameter, compressed_weights_oracle, transformation_matrix, ward_constrained, Clustering};
use encludl::datagen::{generate, ScenarioConfig};
use encludl::dlasso::{desparsified_lasso, InferenceConfig};
use encludl::grid::{SpatialDomain, WeightMap};
use encludl::lasso::{kkt_violation, lasso_cd, DEFAULT_MAX_ITER, DEFAULT_TOL};
use encludl::metrics::{delta_fwer_estimate, RunOutcome};
use encludl::pipeline::{bootstrap_clustering, empirical_quantile, quantile_aggregate, EnsembleConfig, FamilyKind, FamilyLevel, PValueFamily};
use encludl::rng::rng_from_seed;
use encludl_cli::config::{ExperimentSpec, Method};
use encludl_cli::experiment::{run_central_scenario, RunReport};
use encludl_cli::output::summary_csv;

const MASTER_SEED: u64 = 2024;

fn fwer_bound(alpha: f64, runs: usize) -> f64 {
    alpha + 1.2816 * (alpha * (1.0 - alpha) / runs as f64).sqrt()
}

fn central_spec(methods: Vec<Method>, c_grid: Vec<usize>) -> ExperimentSpec {
    ExperimentSpec {
        methods,
        c_grid,
        n_seeds: 100,
        seed: MASTER_SEED,
        n_bootstraps: 25,
        gamma: 0.5,
        alpha: 0.1,
        workers: Some(1),
        timing: false,
        ..ExperimentSpec::default()
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

/// Runs shared by several criteria.
#[derive(Default)]
struct Cache {
    central: Option<RunReport>,
}

impl Cache {
    fn central(&mut self) -> &RunReport {
        self.central.get_or_insert_with(|| {
            run_central_scenario(&central_spec(vec![Method::Encludl], vec![100, 200])).expect("central run")
        })
    }
}

fn fwer_rows(report: &RunReport, method: Method, bound: f64) -> (bool, Vec<String>) {
    let mut ok = true;
    let mut parts = Vec::new();
    for row in report.rows.iter().filter(|r| r.method == method) {
        match &row.summary {
            Some(s) => {
                let pass = s.delta_fwer.rate <= bound;
                ok &= pass;
                parts.push(format!(
                    "C={} delta={} dFWER={:.3} [{:.3}, {:.3}] FWER={:.3} TPRmed={:.3}",
                    row.n_clusters,
                    row.delta.unwrap_or(f64::NAN),
                    s.delta_fwer.rate,
                    s.delta_fwer.ci_lo,
                    s.delta_fwer.ci_hi,
                    s.fwer.rate,
                    s.tpr_median
                ));
            }
            None => {
                ok = false;
                parts.push(format!("C={} error: {}", row.n_clusters, row.error.as_deref().unwrap_or("?")));
            }
        }
    }
    (ok, parts)
}

/// δ-FWER of a cell re-scored at a fixed tolerance instead of its realized
/// diameter.
fn delta_fwer_at(report: &RunReport, method: Method, n_clusters: usize, delta: f64) -> Option<f64> {
    let task = report.task(method, n_clusters)?;
    let outcomes: Vec<RunOutcome> = task
        .records
        .iter()
        .map(|r| RunOutcome::new(r.selected.clone(), &task.truth, 0.1, delta))
        .collect();
    delta_fwer_estimate(&outcomes).ok().map(|e| e.rate)
}

fn criterion_1(cache: &mut Cache) -> Outcome {
    let bound = fwer_bound(0.1, 100);
    let report = cache.central();
    let (ok, parts) = fwer_rows(report, Method::Encludl, bound);
    let fixed: Vec<String> = [(100, 8.0), (200, 6.0)]
        .iter()
        .filter_map(|&(c, d)| delta_fwer_at(report, Method::Encludl, c, d).map(|r| format!("C={c} at delta={d}: {r:.3}")))
        .collect();
    Outcome::new(
        ok,
        format!("bound {bound:.3}; {}; for reference, {}", parts.join("; "), fixed.join(", ")),
    )
}

fn criterion_2(cache: &mut Cache) -> Outcome {
    let baselines = run_central_scenario(&central_spec(vec![Method::Cludl, Method::DlassoFull], vec![200])).expect("baseline run");
    let median = |report: &RunReport, method: Method| {
        report
            .rows
            .iter()
            .find(|r| r.method == method && (method == Method::DlassoFull || r.n_clusters == 200))
            .and_then(|r| r.summary.as_ref())
            .map(|s| s.tpr_median)
    };
    let (Some(ens), Some(clu), Some(full)) = (
        median(cache.central(), Method::Encludl),
        median(&baselines, Method::Cludl),
        median(&baselines, Method::DlassoFull),
    ) else {
        return Outcome::new(false, "a method failed to produce a summary");
    };
    let ok = ens >= clu && clu >= full && full < 0.2;
    Outcome::new(ok, format!("median TPR at C=200: EnCluDL {ens:.3}, CluDL {clu:.3}, full desparsified Lasso {full:.3}"))
}

fn criterion_3() -> Outcome {
    let bound = fwer_bound(0.1, 100);
    let mut spec = central_spec(vec![Method::Encludl], vec![100, 200, 300, 400]);
    spec.scenario.n_samples = 400;
    let report = run_central_scenario(&spec).expect("n=400 run");
    let (ok, parts) = fwer_rows(&report, Method::Encludl, bound);

    spec.scenario.n_samples = 50;
    let small = run_central_scenario(&spec).expect("n=50 run");
    let (_, small_parts) = fwer_rows(&small, Method::Encludl, bound);
    Outcome::new(
        ok,
        format!("n=400 (bound {bound:.3}): {}; n=50 (reported only): {}", parts.join("; "), small_parts.join("; ")),
    )
}

/// Median over clusterings of the per-clustering maximum diameter.
fn criterion_4() -> Outcome {
    let reference = [(100usize, 8.0), (200, 6.0), (300, 5.0), (400, 4.0)];
    let seeds = 10u64;
    let base = ScenarioConfig::default();
    let domain = base.domain().unwrap();
    let data: Vec<DMatrix<f64>> = (0..seeds)
        .map(|s| generate(&ScenarioConfig { seed: 1000 + s, ..base.clone() }).unwrap().0.x)
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (c, target) in reference {
        let mut diam = Vec::new();
        let mut full = Vec::new();
        for (s, x) in data.iter().enumerate() {
            let cfg = EnsembleConfig {
                n_clusters: c,
                seed: s as u64,
                ..EnsembleConfig::default()
            };
            for b in 0..cfg.n_bootstraps {
                diam.push(clustering_diameter(&bootstrap_clustering(x, &domain, &cfg, b).unwrap()));
            }
            full.push(clustering_diameter(&ward_constrained(x, &domain, c).unwrap()));
        }
        let med = empirical_quantile(&diam, 0.5).unwrap();
        let lo = diam.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diam.iter().copied().fold(0.0, f64::max);
        let full_med = empirical_quantile(&full, 0.5).unwrap();
        let pass = (med - target).abs() <= 2.0;
        ok &= pass;
        parts.push(format!(
            "C={c}: median {med} (range {lo}-{hi}, full-data median {full_med}) vs {target} {}",
            if pass { "ok" } else { "out of range" }
        ));
    }
    Outcome::new(ok, parts.join("; "))
}

/// Random block-independent covariance with nonnegative within-block
/// entries, contiguous groups on a line and sign-consistent weights.
fn oracle_instance(rng: &mut impl Rng) -> (Clustering, DMatrix<f64>, Vec<f64>) {
    let p = rng.random_range(2..=12);
    let mut labels = Vec::with_capacity(p);
    let mut g = 0;
    for j in 0..p {
        if j > 0 && rng.random_bool(0.35) {
            g += 1;
        }
        labels.push(g);
    }
    let l = DMatrix::from_fn(p, p, |_, _| rng.random_range(0.0..1.0));
    let mut sigma = &l * l.transpose() + DMatrix::identity(p, p) * 0.05;
    for j in 0..p {
        for k in 0..p {
            if labels[j] != labels[k] {
                sigma[(j, k)] = 0.0;
            }
        }
    }
    let signs: Vec<f64> = (0..=g).map(|_| [-1.0, 0.0, 1.0][rng.random_range(0..3)]).collect();
    let beta = labels
        .iter()
        .map(|&c| if rng.random_bool(0.3) { 0.0 } else { signs[c] * rng.random_range(0.1..3.0) })
        .collect();
    let clustering = Clustering::from_labels(labels, SpatialDomain::line(p).unwrap()).unwrap();
    (clustering, sigma, beta)
}

fn criterion_5() -> Outcome {
    let mut rng = rng_from_seed(5);
    let mut worst = 0.0f64;
    let mut pattern_failures = 0;
    for _ in 0..500 {
        let (clustering, sigma, beta) = oracle_instance(&mut rng);
        let w = WeightMap::new(beta.clone(), clustering.domain().clone()).unwrap();
        let theta = compressed_weights_oracle(&sigma, &clustering, &w).unwrap();
        let a = transformation_matrix(&clustering).to_dense();
        let upsilon = a.transpose() * &sigma * &a;
        let rhs = a.transpose() * &sigma * DVector::from_vec(beta.clone());
        let projection = upsilon.lu().solve(&rhs).unwrap();
        worst = worst.max((&theta - &projection).amax());
        for (c, members) in clustering.groups().iter().enumerate() {
            let sign = members.iter().map(|&j| beta[j]).find(|b| *b != 0.0).map(f64::signum);
            let ok = match sign {
                Some(s) => theta[c] != 0.0 && theta[c].signum() == s,
                None => theta[c] == 0.0,
            };
            if !ok {
                pattern_failures += 1;
            }
        }
    }
    Outcome::new(
        worst <= 1e-10 && pattern_failures == 0,
        format!("500 instances: max |oracle - projection| = {worst:.2e}, sign/zero mismatches = {pattern_failures}"),
    )
}

/// Null families that individually control the FWER: Bonferroni-corrected
/// uniforms over `m` null covariates. `shared` is the probability that a
/// bootstrap reuses the common draw for a covariate.
fn aggregated_fwer(gamma: f64, alpha: f64, shared: f64, trials: usize, seed: u64) -> f64 {
    let (m, b) = (50usize, 25usize);
    let mut rng = rng_from_seed(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let common: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let families: Vec<PValueFamily> = (0..b)
            .map(|_| {
                let values = (0..m)
                    .map(|j| {
                        let u = if rng.random_bool(shared) { common[j] } else { rng.random::<f64>() };
                        (m as f64 * u).min(1.0)
                    })
                    .collect();
                PValueFamily::new(values, FamilyLevel::Covariate, FamilyKind::Corrected).unwrap()
            })
            .collect();
        if quantile_aggregate(&families, gamma).unwrap().min() <= alpha {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut worst = (0.0, String::new());
    let mut seed = 0;
    for gamma in [0.3, 0.5, 0.7] {
        for alpha in [0.05, 0.1] {
            for (label, shared) in [("independent", 0.0), ("half-shared", 0.5), ("identical", 1.0)] {
                seed += 1;
                let rate = aggregated_fwer(gamma, alpha, shared, 2000, seed);
                ok &= rate <= alpha + 0.02;
                let excess = rate - alpha;
                if worst.1.is_empty() || excess > worst.0 {
                    worst = (excess, format!("gamma={gamma} alpha={alpha} {label}: {rate:.4}"));
                }
            }
        }
    }
    Outcome::new(ok, format!("18 settings x 2000 trials; largest excess over alpha at {}", worst.1))
}

fn brute_force_quantile(values: &[f64], gamma: f64) -> f64 {
    let m = values.len() as f64;
    values
        .iter()
        .copied()
        .filter(|&v| values.iter().filter(|&&w| w <= v).count() as f64 / m >= gamma)
        .fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut mismatches = 0;
    for i in 0..1000 {
        let len = rng.random_range(1..=60);
        let values: Vec<f64> = if i % 2 == 0 {
            (0..len).map(|_| rng.random::<f64>()).collect()
        } else {
            (0..len).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()
        };
        let gamma = match i % 4 {
            // Exact mass boundaries, where off-by-one errors show.
            0 if len > 1 => rng.random_range(1..len) as f64 / len as f64,
            _ => rng.random_range(1e-6..1.0),
        };
        if empirical_quantile(&values, gamma).unwrap() != brute_force_quantile(&values, gamma) {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("1000 random sets, {mismatches} mismatches against brute force"))
}

fn gaussian(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

fn criterion_8() -> Outcome {
    // Plain Lasso solves on random problems, certified by an independent
    // KKT evaluation. The solver's tolerance is relative to the target's
    // root mean square once it exceeds one.
    let scaled_tol = |y: &DVector<f64>, tol: f64| tol * (y.norm_squared() / y.len() as f64).sqrt().max(1.0);
    let mut rng = rng_from_seed(8);
    let mut worst_kkt = 0.0f64;
    let mut unconverged = 0;
    for _ in 0..200 {
        let n = rng.random_range(20..80);
        let p = rng.random_range(5..120);
        let z = gaussian(&mut rng, n, p);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lambda_max = (z.tr_mul(&y) / n as f64).amax();
        let lambda = lambda_max * rng.random_range(0.05..1.0);
        let sol = lasso_cd(&z, &y, lambda, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        if !sol.converged {
            unconverged += 1;
        }
        worst_kkt = worst_kkt.max(kkt_violation(&z, &y, &sol.coef, lambda) / scaled_tol(&y, DEFAULT_TOL));
    }

    // Coverage of the desparsified Lasso intervals on independent clusters.
    let (n, c, runs) = (500, 20, 500);
    let mut theta = DVector::zeros(c);
    theta[0] = 0.5;
    theta[1] = -0.3;
    theta[2] = 0.2;
    let cfg = InferenceConfig::default();
    let mut covered = 0;
    let mut worst_fit = 0.0f64;
    for _ in 0..runs {
        let z = gaussian(&mut rng, n, c);
        let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &z * &theta + eps;
        let fit = desparsified_lasso(&z, &y, &cfg).unwrap();
        if !fit.all_converged {
            unconverged += 1;
        }
        let yc = y.add_scalar(-y.mean());
        worst_fit = worst_fit.max(fit.max_kkt_residual / scaled_tol(&yc, cfg.tol));
        covered += (0..c)
            .filter(|&k| {
                let (lo, hi) = fit.confidence_interval(k, 1.96);
                lo <= theta[k] && theta[k] <= hi
            })
            .count();
    }
    let coverage = covered as f64 / (runs * c) as f64;
    let ok = worst_kkt <= 1.0 && worst_fit <= 1.0 && unconverged == 0 && (coverage - 0.95).abs() <= 0.03;
    Outcome::new(
        ok,
        format!(
            "max KKT residual / tolerance {worst_kkt:.3} (random solves), {worst_fit:.3} (desparsified fits), unconverged {unconverged}; coverage {coverage:.4} over {} intervals",
            runs * c
        ),
    )
}

fn criterion_9(cache: &mut Cache) -> Outcome {
    let first = summary_csv(&cache.central().rows);
    let mut spec = central_spec(vec![Method::Encludl], vec![100, 200]);
    spec.workers = Some(3);
    let second = summary_csv(&run_central_scenario(&spec).expect("rerun").rows);
    Outcome::new(
        first.as_bytes() == second.as_bytes(),
        format!("summary CSV with 1 and 3 workers: {} bytes each, identical = {}", first.len(), first == second),
    )
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|set| set.contains(&k));

    let mut cache = Cache::default();
    let mut failed = Vec::new();
    for k in 1..=9 {
        if !wanted(k) {
            continue;
        }
        let start = Instant::now();
        let outcome = match k {
            1 => criterion_1(&mut cache),
            2 => criterion_2(&mut cache),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => criterion_9(&mut cache),
        };
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {k}: {verdict} ({:.0}s) {}", start.elapsed().as_secs_f64(), outcome.detail);
        if !outcome.passed {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
