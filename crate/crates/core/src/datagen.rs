//! Synthetic 2D scenario: four square active regions on an `edge × edge`
//! grid, a design built from spatially smoothed Gaussian noise whose
//! smoothing width is calibrated to a target adjacent-covariate
//! correlation, and a Gaussian-noise target.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialDomain, WeightMap};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Active-weight magnitude of the central scenario. With unit-variance
/// columns and ρ = 0.75 this puts the realized signal-to-noise ratio
/// `‖Xβ‖/‖ε‖` at about 3.5 for σ_ε = 2.
pub const CENTRAL_AMPLITUDE: f64 = 0.33;

const SMOOTHING_BRACKET: (f64, f64) = (0.1, 10.0);
const RHO_TOLERANCE: f64 = 0.01;
const KERNEL_TRUNCATE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Grid edge length; the grid holds `edge²` covariates.
    #[serde(default = "defaults::edge")]
    pub edge: usize,
    #[serde(rename = "n", default = "defaults::n")]
    pub n_samples: usize,
    /// Width of each square active region.
    #[serde(rename = "h", default = "defaults::h")]
    pub region_width: usize,
    /// Target correlation between adjacent covariates.
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::sigma_eps")]
    pub sigma_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::amplitude")]
    pub amplitude: f64,
    /// Make the two off-diagonal regions negative.
    #[serde(default)]
    pub signed: bool,
}

mod defaults {
    pub fn edge() -> usize {
        40
    }
    pub fn n() -> usize {
        100
    }
    pub fn h() -> usize {
        4
    }
    pub fn rho() -> f64 {
        0.75
    }
    pub fn sigma_eps() -> f64 {
        2.0
    }
    pub fn amplitude() -> f64 {
        super::CENTRAL_AMPLITUDE
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            edge: defaults::edge(),
            n_samples: defaults::n(),
            region_width: defaults::h(),
            rho: defaults::rho(),
            sigma_eps: defaults::sigma_eps(),
            seed: 0,
            amplitude: defaults::amplitude(),
            signed: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region_width == 0 || 2 * self.region_width >= self.edge {
            return Err(Error::Config(format!(
                "active-region width {} must satisfy 0 < h < edge/2 = {}",
                self.region_width,
                self.edge as f64 / 2.0
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {}", self.n_samples)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return Err(Error::Config(format!("sigma_eps must be >= 0, got {}", self.sigma_eps)));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        SpatialDomain::square(self.edge)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n × p` design, one column per covariate.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weight_map: WeightMap,
    pub eps: DVector<f64>,
    /// `‖Xβ‖/‖ε‖`; infinite when the noise is exactly zero.
    pub snr: f64,
}

/// Outcome of the smoothing-width calibration.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub achieved_rho: f64,
    pub smoothing_width: f64,
}

fn region_start(center: usize, width: usize) -> usize {
    center - width / 2
}

/// Four `width × width` squares of value `amplitude` centred on the
/// quarter-grid points, flattened row-major.
pub fn make_weight_map(edge: usize, width: usize, amplitude: f64) -> Result<WeightMap> {
    build_weight_map(edge, width, amplitude, false)
}

/// Same layout as [`make_weight_map`] with the two off-diagonal regions
/// negated.
pub fn make_signed_weight_map(edge: usize, width: usize, amplitude: f64) -> Result<WeightMap> {
    build_weight_map(edge, width, amplitude, true)
}

fn build_weight_map(edge: usize, width: usize, amplitude: f64, signed: bool) -> Result<WeightMap> {
    if width == 0 || 2 * width >= edge {
        return Err(Error::Config(format!(
            "active-region width {width} must satisfy 0 < h < edge/2 for edge {edge}"
        )));
    }
    let domain = SpatialDomain::square(edge)?;
    let mut beta = vec![0.0; edge * edge];
    let (q1, q3) = (edge / 4, 3 * edge / 4);
    for (ci, cj, sign) in [(q1, q1, 1.0), (q1, q3, -1.0), (q3, q1, -1.0), (q3, q3, 1.0)] {
        let value = if signed { sign * amplitude } else { amplitude };
        let (r0, c0) = (region_start(ci, width), region_start(cj, width));
        for r in r0..r0 + width {
            for c in c0..c0 + width {
                beta[r * edge + c] = value;
            }
        }
    }
    WeightMap::new(beta, domain)
}

fn gaussian_kernel(width: f64) -> Vec<f64> {
    let radius = ((KERNEL_TRUNCATE * width).round() as usize).max(1);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * width * width)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index into `0..len` with the edge sample repeated (`d c b a | a b c d`).
fn reflect(mut i: i64, len: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= len {
            i = 2 * len - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian smoothing of a row-major `edge × edge` image.
fn smooth_image(img: &[f64], edge: usize, kernel: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    let radius = (kernel.len() / 2) as i64;
    let e = edge as i64;
    for r in 0..edge {
        let row = &img[r * edge..(r + 1) * edge];
        for c in 0..edge {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                acc += w * row[reflect(c as i64 + t as i64 - radius, e)];
            }
            tmp[r * edge + c] = acc;
        }
    }
    for r in 0..edge {
        for c in 0..edge {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                acc += w * tmp[reflect(r as i64 + t as i64 - radius, e) * edge + c];
            }
            out[r * edge + c] = acc;
        }
    }
}

fn smoothed_design(raw: &[Vec<f64>], edge: usize, width: f64) -> DMatrix<f64> {
    let n = raw.len();
    let p = edge * edge;
    let kernel = gaussian_kernel(width);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut tmp = vec![0.0; p];
    let mut out = vec![0.0; p];
    for (i, img) in raw.iter().enumerate() {
        smooth_image(img, edge, &kernel, &mut tmp, &mut out);
        for (j, v) in out.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    x
}

/// Centres each column and scales it to unit sample variance (n − 1
/// denominator). Constant columns are left centred at zero.
pub fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (n as f64 - 1.0);
        if var > 0.0 {
            col /= var.sqrt();
        }
    }
}

/// Mean empirical correlation between 4-adjacent columns.
pub fn mean_adjacent_correlation(x: &DMatrix<f64>, domain: &SpatialDomain) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let mut unit = x.clone();
    for mut col in unit.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..p {
        for k in domain.neighbors(j) {
            if k > j {
                total += unit.column(j).dot(&unit.column(k));
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Draws `n` smoothed Gaussian images on an `edge × edge` grid, flattens
/// them into an `n × edge²` design with unit-variance columns, and bisects
/// the smoothing width until the mean adjacent correlation is within 0.01
/// of `rho`.
pub fn make_design(n: usize, edge: usize, rho: f64, seed: u64) -> Result<Design> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    if n < 2 || edge < 2 {
        return Err(Error::Config(format!("need n >= 2 and edge >= 2, got n={n}, edge={edge}")));
    }
    let domain = SpatialDomain::square(edge)?;
    let p = edge * edge;
    let mut rng = rng_from_seed(seed);
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let eval = |width: f64| {
        let x = smoothed_design(&raw, edge, width);
        let r = mean_adjacent_correlation(&x, &domain);
        (x, r)
    };

    let (mut lo, mut hi) = SMOOTHING_BRACKET;
    let (_, r_lo) = eval(lo);
    let (_, r_hi) = eval(hi);
    if !(r_lo < rho && rho < r_hi) {
        return Err(Error::Calibration(format!(
            "target correlation {rho} not bracketed: widths [{lo}, {hi}] give [{r_lo:.4}, {r_hi:.4}]"
        )));
    }

    let mut best: Option<(DMatrix<f64>, f64, f64)> = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (x, r) = eval(mid);
        let better = best.as_ref().is_none_or(|(_, rb, _)| (r - rho).abs() < (rb - rho).abs());
        let done = (r - rho).abs() <= RHO_TOLERANCE / 10.0;
        if r < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if better {
            best = Some((x, r, mid));
        }
        if done || hi - lo < 1e-9 {
            break;
        }
    }
    let (mut x, achieved_rho, smoothing_width) = best.expect("at least one bisection step");
    if (achieved_rho - rho).abs() > RHO_TOLERANCE {
        return Err(Error::Calibration(format!(
            "bisection stalled at correlation {achieved_rho:.4} for target {rho}"
        )));
    }
    standardize_columns(&mut x);
    Ok(Design {
        x,
        achieved_rho,
        smoothing_width,
    })
}

/// `y = Xβ + ε` with `ε ~ N(0, σ²I)` drawn from `seed`.
pub fn make_target(x: &DMatrix<f64>, w: &WeightMap, sigma_eps: f64, seed: u64) -> Result<Dataset> {
    if x.ncols() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, weight map has {} entries",
            x.ncols(),
            w.len()
        )));
    }
    if !(sigma_eps >= 0.0) {
        return Err(Error::Config(format!("sigma_eps must be >= 0, got {sigma_eps}")));
    }
    let mut rng = rng_from_seed(seed);
    let n = x.nrows();
    let eps = DVector::from_fn(n, |_, _| sigma_eps * rng.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_column_slice(w.beta());
    let signal = x * beta;
    let noise_norm = eps.norm();
    let snr = if noise_norm == 0.0 {
        f64::INFINITY
    } else {
        signal.norm() / noise_norm
    };
    let y = &signal + &eps;
    Ok(Dataset {
        x: x.clone(),
        y,
        weight_map: w.clone(),
        eps,
        snr,
    })
}

/// Weight map of a scenario; it does not depend on the seed.
pub fn scenario_weight_map(config: &ScenarioConfig) -> Result<WeightMap> {
    if config.signed {
        make_signed_weight_map(config.edge, config.region_width, config.amplitude)
    } else {
        make_weight_map(config.edge, config.region_width, config.amplitude)
    }
}

/// Full scenario draw: weight map, calibrated design and target, each from
/// its own stream of `config.seed`.
pub fn generate(config: &ScenarioConfig) -> Result<(Dataset, Design)> {
    config.validate()?;
    let w = scenario_weight_map(config)?;
    let design = make_design(
        config.n_samples,
        config.edge,
        config.rho,
        derive_seed(config.seed, stream::DESIGN, 0),
    )?;
    let data = make_target(&design.x, &w, config.sigma_eps, derive_seed(config.seed, stream::NOISE, 0))?;
    Ok((data, design))
}

#[derive(Debug, Serialize, Deserialize)]
struct DesignSidecar {
    rows: usize,
    cols: usize,
    grid_shape: Vec<usize>,
    dtype: String,
    order: String,
    seed: Option<u64>,
    config: Option<ScenarioConfig>,
    achieved_rho: Option<f64>,
    snr: Option<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes `X.bin` (little-endian f64, row-major), `X.json`, `y.csv` and
/// `beta.csv` into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset, config: Option<&ScenarioConfig>, achieved_rho: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (n, p) = data.x.shape();

    let bin = dir.join("X.bin");
    let mut f = BufWriter::new(fs::File::create(&bin).map_err(io_err(&bin))?);
    for i in 0..n {
        for j in 0..p {
            f.write_all(&data.x[(i, j)].to_le_bytes()).map_err(io_err(&bin))?;
        }
    }
    f.flush().map_err(io_err(&bin))?;

    let sidecar = DesignSidecar {
        rows: n,
        cols: p,
        grid_shape: data.weight_map.domain().shape().to_vec(),
        dtype: "f64-le".into(),
        order: "row-major".into(),
        seed: config.map(|c| c.seed),
        config: config.cloned(),
        achieved_rho,
        snr: data.snr.is_finite().then_some(data.snr),
    };
    let meta = dir.join("X.json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&meta, text).map_err(io_err(&meta))?;

    write_column(&dir.join("y.csv"), "y", data.y.as_slice())?;
    write_column(&dir.join("beta.csv"), "beta", data.weight_map.beta())?;
    Ok(())
}

fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "{header}").map_err(io_err(path))?;
    for v in values {
        writeln!(f, "{v:?}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format_err(path, format!("line {}: not a number: {line:?}", lineno + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Loads a dataset written by [`write_dataset`]. The noise vector is not
/// stored, so `eps` is recovered as `y − Xβ`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta = dir.join("X.json");
    let text = fs::read_to_string(&meta).map_err(io_err(&meta))?;
    let sidecar: DesignSidecar =
        serde_json::from_str(&text).map_err(|e| format_err(&meta, e.to_string()))?;
    let domain = SpatialDomain::new(&sidecar.grid_shape)?;
    if domain.len() != sidecar.cols {
        return Err(format_err(&meta, format!(
            "grid shape {:?} does not match {} columns",
            sidecar.grid_shape, sidecar.cols
        )));
    }

    let bin = dir.join("X.bin");
    let mut bytes = Vec::new();
    fs::File::open(&bin)
        .map_err(io_err(&bin))?
        .read_to_end(&mut bytes)
        .map_err(io_err(&bin))?;
    let (n, p) = (sidecar.rows, sidecar.cols);
    if bytes.len() != n * p * 8 {
        return Err(format_err(&bin, format!("expected {} bytes, found {}", n * p * 8, bytes.len())));
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        x[(k / p, k % p)] = v;
    }

    let y_path = dir.join("y.csv");
    let y = read_column(&y_path)?;
    if y.len() != n {
        return Err(format_err(&y_path, format!("expected {n} values, found {}", y.len())));
    }
    let beta_path = dir.join("beta.csv");
    let beta = read_column(&beta_path)?;
    if beta.len() != p {
        return Err(format_err(&beta_path, format!("expected {p} values, found {}", beta.len())));
    }
    let weight_map = WeightMap::new(beta, domain)?;
    let y = DVector::from_vec(y);
    let signal = &x * DVector::from_column_slice(weight_map.beta());
    let eps = &y - &signal;
    let snr = if eps.norm() == 0.0 { f64::INFINITY } else { signal.norm() / eps.norm() };
    Ok(Dataset {
        x,
        y,
        weight_map,
        eps,
        snr,
    })
}
