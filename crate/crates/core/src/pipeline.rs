//! Clustered inference (CluDL) and its ensembled variant (EnCluDL):
//! compression, cluster-level testing, Bonferroni correction, de-grouping
//! and quantile aggregation of p-value families.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    clustering_diameter, compress, subsample_rows, transformation_matrix, ward_constrained, Clustering,
    DEFAULT_SUBSAMPLE_FRACTION,
};
use crate::dlasso::{adjusted_cluster_pvalues, desparsified_lasso, ols_inference, Backend, InferenceConfig};
use crate::error::{Error, Result};
use crate::grid::SpatialDomain;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyLevel {
    Cluster,
    Covariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Raw,
    Corrected,
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Single,
    Bootstrap(usize),
    Ensembled,
}

/// A vector of p-values together with what they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueFamily {
    values: Vec<f64>,
    level: FamilyLevel,
    kind: FamilyKind,
    provenance: Provenance,
}

impl PValueFamily {
    pub fn new(values: Vec<f64>, level: FamilyLevel, kind: FamilyKind) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("p-value {bad} outside [0, 1]")));
        }
        Ok(Self::new_unchecked(values, level, kind))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>, level: FamilyLevel, kind: FamilyKind) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            values,
            level,
            kind,
            provenance: Provenance::Single,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level(&self) -> FamilyLevel {
        self.level
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(1.0, f64::min)
    }

    /// Writes `covariate_index,p_value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(f, "covariate_index,p_value").map_err(io)?;
        for (j, p) in self.values.iter().enumerate() {
            writeln!(f, "{j},{p}").map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// `min(1, C·p)` for a raw cluster-level family of length `C`.
pub fn bonferroni(raw: &PValueFamily) -> Result<PValueFamily> {
    if raw.level != FamilyLevel::Cluster || raw.kind != FamilyKind::Raw {
        return Err(Error::Contract("Bonferroni correction expects a raw cluster-level family".into()));
    }
    let factor = raw.len() as f64;
    let values = raw.values.iter().map(|p| (factor * p).min(1.0)).collect();
    Ok(PValueFamily::new_unchecked(values, FamilyLevel::Cluster, FamilyKind::Corrected).with_provenance(raw.provenance))
}

/// Broadcasts cluster-level values to covariates: `q_j = q_{g(j)}`.
pub fn degroup(family: &PValueFamily, clustering: &Clustering) -> Result<PValueFamily> {
    if family.level != FamilyLevel::Cluster {
        return Err(Error::Contract("de-grouping expects a cluster-level family".into()));
    }
    let values = clustering
        .labels()
        .iter()
        .map(|&c| {
            family.values.get(c).copied().ok_or(Error::IndexOutOfRange {
                index: c,
                size: family.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PValueFamily::new_unchecked(values, FamilyLevel::Covariate, family.kind).with_provenance(family.provenance))
}

/// Raw cluster-level p-values of `y` on the compressed design `z`.
pub fn cluster_inference(z: &DMatrix<f64>, y: &DVector<f64>, config: &InferenceConfig) -> Result<PValueFamily> {
    match config.backend {
        Backend::DesparsifiedLasso => {
            let fit = desparsified_lasso(z, y, config)?;
            adjusted_cluster_pvalues(&fit, config.adjustment_a)
        }
        Backend::Ols => ols_inference(z, y),
    }
}

/// Corrected covariate-level p-values of clustered inference with a fixed
/// clustering.
pub fn cludl(x: &DMatrix<f64>, y: &DVector<f64>, clustering: &Clustering, config: &InferenceConfig) -> Result<PValueFamily> {
    let a = transformation_matrix(clustering);
    let z = compress(x, &a)?;
    let raw = cluster_inference(&z, y, config)?;
    degroup(&bonferroni(&raw)?, clustering)
}

/// Smallest `v` in `values` with `#{w ≤ v} / |V| ≥ γ`.
pub fn empirical_quantile(values: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("quantile of an empty set".into()));
    }
    check_gamma(gamma)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, gamma))
}

fn quantile_sorted(sorted: &[f64], gamma: f64) -> f64 {
    let m = sorted.len();
    let mf = m as f64;
    let mut k = ((gamma * mf).ceil() as usize).clamp(1, m);
    while k > 1 && (k - 1) as f64 / mf >= gamma {
        k -= 1;
    }
    while k < m && (k as f64 / mf) < gamma {
        k += 1;
    }
    sorted[k - 1]
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// `q̃_j = min{1, γ-quantile({q_j^(b) / γ})}` over the families.
pub fn quantile_aggregate(families: &[PValueFamily], gamma: f64) -> Result<PValueFamily> {
    check_gamma(gamma)?;
    let Some(first) = families.first() else {
        return Err(Error::Contract("aggregation needs at least one family".into()));
    };
    let p = first.len();
    if families.iter().any(|f| f.len() != p) {
        return Err(Error::Contract("aggregated families differ in length".into()));
    }
    let mut column = vec![0.0; families.len()];
    let values = (0..p)
        .map(|j| {
            for (slot, f) in column.iter_mut().zip(families) {
                *slot = f.values[j] / gamma;
            }
            column.sort_by(f64::total_cmp);
            quantile_sorted(&column, gamma).min(1.0)
        })
        .collect();
    Ok(PValueFamily::new_unchecked(values, first.level, FamilyKind::Aggregated).with_provenance(Provenance::Ensembled))
}

/// `{ j : q_j ≤ α }`.
pub fn select(family: &PValueFamily, alpha: f64) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(family.values.iter().enumerate().filter(|(_, &q)| q <= alpha).map(|(j, _)| j).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_clusters: usize,
    pub n_bootstraps: usize,
    pub gamma: f64,
    pub subsample_fraction: f64,
    pub inference: InferenceConfig,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_clusters: 200,
            n_bootstraps: 25,
            gamma: 0.5,
            subsample_fraction: DEFAULT_SUBSAMPLE_FRACTION,
            inference: InferenceConfig::default(),
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstraps == 0 {
            return Err(Error::Config("at least one bootstrap is required".into()));
        }
        if self.n_clusters == 0 {
            return Err(Error::Config("cluster count must be positive".into()));
        }
        check_gamma(self.gamma)?;
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subsample fraction must lie in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        self.inference.validate()
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub family: PValueFamily,
    pub clusterings: Vec<Clustering>,
    pub diameters: Vec<f64>,
    /// Largest clustering diameter over the bootstraps.
    pub delta: f64,
}

/// Clustering of bootstrap `b`: Ward on a row subsample drawn from the
/// bootstrap's own seed.
pub fn bootstrap_clustering(x: &DMatrix<f64>, domain: &SpatialDomain, config: &EnsembleConfig, b: usize) -> Result<Clustering> {
    let seed = derive_seed(config.seed, stream::BOOTSTRAP, b as u64);
    let xsub = subsample_rows(x, config.subsample_fraction, seed)?;
    ward_constrained(&xsub, domain, config.n_clusters)
}

/// Ensembled clustered inference. Each bootstrap clusters a row subsample
/// and runs CluDL on the full data; the corrected families are combined by
/// quantile aggregation. Any failing bootstrap fails the run.
pub fn encludl(x: &DMatrix<f64>, y: &DVector<f64>, domain: &SpatialDomain, config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    if x.ncols() != domain.len() || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, target {}, domain {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            domain.len()
        )));
    }
    let runs: Vec<Result<(Clustering, PValueFamily)>> = (0..config.n_bootstraps)
        .into_par_iter()
        .map(|b| {
            let wrap = |e| Error::Bootstrap {
                index: b,
                source: Box::new(e),
            };
            let clustering = bootstrap_clustering(x, domain, config, b).map_err(wrap)?;
            let family = cludl(x, y, &clustering, &config.inference).map_err(wrap)?;
            Ok((clustering, family.with_provenance(Provenance::Bootstrap(b))))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let (clusterings, families): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let diameters: Vec<f64> = clusterings.iter().map(clustering_diameter).collect();
    let delta = diameters.iter().copied().fold(0.0, f64::max);
    let family = quantile_aggregate(&families, config.gamma)?;
    Ok(EnsembleResult {
        family,
        clusterings,
        diameters,
        delta,
    })
}
