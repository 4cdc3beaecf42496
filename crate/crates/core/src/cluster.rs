//! Spatially constrained Ward clustering and the cluster-mean compression
//! `Z = XA`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ordered_float::OrderedFloat;
use rand::seq::index::sample;

use crate::datagen::standardize_columns;
use crate::error::{Error, Result};
use crate::grid::{SpatialDomain, WeightMap};
use crate::rng::rng_from_seed;

/// Default fraction of rows kept when randomizing a clustering.
pub const DEFAULT_SUBSAMPLE_FRACTION: f64 = 0.7;

/// A partition of the covariates of a domain into nonempty groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    labels: Vec<usize>,
    groups: Vec<Vec<usize>>,
    domain: SpatialDomain,
    merge_costs: Vec<f64>,
}

impl Clustering {
    /// Builds a clustering from per-covariate labels in `0..C`. Every label
    /// must be used at least once.
    pub fn from_labels(labels: Vec<usize>, domain: SpatialDomain) -> Result<Self> {
        if labels.len() != domain.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} covariates",
                labels.len(),
                domain.len()
            )));
        }
        let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_clusters];
        for (j, &c) in labels.iter().enumerate() {
            groups[c].push(j);
        }
        if let Some(empty) = groups.iter().position(|g| g.is_empty()) {
            return Err(Error::Contract(format!("cluster label {empty} is unused")));
        }
        Ok(Self {
            labels,
            groups,
            domain,
            merge_costs: Vec::new(),
        })
    }

    /// Every covariate in its own cluster.
    pub fn singletons(domain: SpatialDomain) -> Self {
        let p = domain.len();
        Self::from_labels((0..p).collect(), domain).expect("singleton labels are valid")
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn n_clusters(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.labels.len()
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    /// Ward costs of the accepted merges, in merge order. Empty for
    /// clusterings not produced by agglomeration.
    pub fn merge_costs(&self) -> &[f64] {
        &self.merge_costs
    }

    /// Largest within-group ℓ1 distance of group `c`.
    pub fn group_diameter(&self, c: usize) -> f64 {
        let g = &self.groups[c];
        let mut best = 0i64;
        for (a, &j) in g.iter().enumerate() {
            for &k in &g[a + 1..] {
                best = best.max(self.domain.distance_unchecked(j, k));
            }
        }
        best as f64
    }

    /// Whether every group is connected in the lattice neighbourhood graph.
    pub fn groups_connected(&self) -> bool {
        self.groups.iter().enumerate().all(|(c, g)| {
            let mut seen = vec![false; g.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            let pos = |j: usize| g.binary_search(&j).ok();
            while let Some(i) = stack.pop() {
                for k in self.domain.neighbors(g[i]) {
                    if self.labels[k] == c {
                        let idx = pos(k).expect("member of group");
                        if !seen[idx] {
                            seen[idx] = true;
                            stack.push(idx);
                        }
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }

    /// Writes `covariate_index,cluster_label` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(f, "covariate_index,cluster_label").map_err(io)?;
        for (j, c) in self.labels.iter().enumerate() {
            writeln!(f, "{j},{c}").map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Largest group diameter of the clustering.
pub fn clustering_diameter(c: &Clustering) -> f64 {
    (0..c.n_clusters()).map(|g| c.group_diameter(g)).fold(0.0, f64::max)
}

/// Uniform row subsample without replacement of `⌊fraction·n⌋` rows, kept
/// in their original order.
pub fn subsample_rows(x: &DMatrix<f64>, fraction: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction must lie in (0, 1], got {fraction}")));
    }
    let n = x.nrows();
    let m = (fraction * n as f64).floor() as usize;
    if m < 2 {
        return Err(Error::Config(format!(
            "subsample of {fraction} x {n} rows leaves fewer than 2 rows"
        )));
    }
    if m == n {
        return Ok(x.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut rows = sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    Ok(x.select_rows(rows.iter()))
}

/// Ward linkage recurrence for the cost between `A ∪ B` and `K`.
pub fn ward_lance_williams(d_ak: f64, d_bk: f64, d_ab: f64, na: usize, nb: usize, nk: usize) -> f64 {
    let (na, nb, nk) = (na as f64, nb as f64, nk as f64);
    ((na + nk) * d_ak + (nb + nk) * d_bk - nk * d_ab) / (na + nb + nk)
}

/// Connectivity-constrained Ward agglomeration of the grid covariates into
/// `n_clusters` groups. Covariate `j` is represented by the standardized
/// column `j` of `xsub`.
pub fn ward_constrained(xsub: &DMatrix<f64>, domain: &SpatialDomain, n_clusters: usize) -> Result<Clustering> {
    if xsub.ncols() != domain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature columns for {} covariates",
            xsub.ncols(),
            domain.len()
        )));
    }
    let mut features = xsub.clone();
    standardize_columns(&mut features);
    let (labels, merge_costs) = ward_with_adjacency(&features, &domain.adjacency(), n_clusters)?;
    let mut c = Clustering::from_labels(labels, domain.clone())?;
    c.merge_costs = merge_costs;
    Ok(c)
}

/// Ward agglomeration of the columns of `features` restricted to merges
/// along `adjacency`. Returns labels numbered by first appearance and the
/// accepted merge costs.
pub fn ward_with_adjacency(
    features: &DMatrix<f64>,
    adjacency: &[Vec<usize>],
    n_clusters: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let (m, p) = features.shape();
    if adjacency.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "adjacency for {} nodes, {p} feature columns",
            adjacency.len()
        )));
    }
    if n_clusters == 0 || n_clusters > p {
        return Err(Error::Config(format!("cluster count must lie in [1, {p}], got {n_clusters}")));
    }

    let mut centroid = features.as_slice().to_vec();
    let mut size = vec![1usize; p];
    let mut members: Vec<Vec<usize>> = (0..p).map(|j| vec![j]).collect();
    let mut alive = vec![true; p];
    let mut version = vec![0u64; p];
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (j, list) in adjacency.iter().enumerate() {
        for &k in list {
            if k >= p {
                return Err(Error::IndexOutOfRange { index: k, size: p });
            }
            if k != j {
                nbrs[j].push(k);
                nbrs[k].push(j);
            }
        }
    }
    for list in &mut nbrs {
        list.sort_unstable();
        list.dedup();
    }

    let cost = |centroid: &[f64], size: &[usize], a: usize, b: usize| -> f64 {
        let (ca, cb) = (&centroid[a * m..(a + 1) * m], &centroid[b * m..(b + 1) * m]);
        let sq: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum();
        let (na, nb) = (size[a] as f64, size[b] as f64);
        na * nb / (na + nb) * sq
    };

    type Entry = Reverse<(OrderedFloat<f64>, usize, usize, u64, u64)>;
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    for (j, row) in nbrs.iter().enumerate() {
        for &k in row {
            if k > j {
                let d = cost(&centroid, &size, j, k);
                heap.push(Reverse((OrderedFloat(d), j, k, 0, 0)));
            }
        }
    }

    let mut remaining = p;
    let mut merge_costs = Vec::with_capacity(p - n_clusters);
    while remaining > n_clusters {
        let Some(Reverse((OrderedFloat(d), a, b, va, vb))) = heap.pop() else {
            return Err(Error::InfeasiblePartition {
                components: remaining,
                requested: n_clusters,
            });
        };
        if !alive[a] || !alive[b] || version[a] != va || version[b] != vb {
            continue;
        }
        debug_assert!(d >= 0.0);

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for t in 0..m {
            centroid[a * m + t] = (na * centroid[a * m + t] + nb * centroid[b * m + t]) / (na + nb);
        }
        size[a] += size[b];
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        alive[b] = false;
        version[a] += 1;

        let b_nbrs = std::mem::take(&mut nbrs[b]);
        for &k in &b_nbrs {
            if k == a {
                continue;
            }
            let list = &mut nbrs[k];
            list.retain(|&x| x != b);
            if let Err(pos) = list.binary_search(&a) {
                list.insert(pos, a);
            }
        }
        let mut merged: Vec<usize> = nbrs[a].iter().chain(&b_nbrs).copied().filter(|&k| k != a && k != b).collect();
        merged.sort_unstable();
        merged.dedup();
        nbrs[a] = merged;

        for &k in &nbrs[a] {
            let dk = cost(&centroid, &size, a, k);
            let (lo, hi) = if a < k { (a, k) } else { (k, a) };
            heap.push(Reverse((OrderedFloat(dk), lo, hi, version[lo], version[hi])));
        }
        merge_costs.push(d);
        remaining -= 1;
    }

    // Relabel by smallest member so output does not depend on merge order.
    let mut roots: Vec<usize> = (0..p).filter(|&j| alive[j]).collect();
    roots.sort_by_key(|&r| members[r].iter().min().copied());
    let mut labels = vec![usize::MAX; p];
    for (c, &r) in roots.iter().enumerate() {
        for &j in &members[r] {
            labels[j] = c;
        }
    }
    Ok((labels, merge_costs))
}

/// Sparse `p × C` averaging matrix with `A[j, c] = 1/|G_c|` iff `j ∈ G_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationMatrix {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl TransformationMatrix {
    pub fn n_features(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn entry(&self, j: usize, c: usize) -> f64 {
        if self.labels[j] == c {
            1.0 / self.sizes[c] as f64
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_features(), self.n_clusters(), |j, c| self.entry(j, c))
    }
}

pub fn transformation_matrix(c: &Clustering) -> TransformationMatrix {
    TransformationMatrix {
        labels: c.labels.clone(),
        sizes: c.sizes(),
    }
}

/// `Z = XA`: column `c` of `Z` is the mean of the columns of `X` in `G_c`.
pub fn compress(x: &DMatrix<f64>, a: &TransformationMatrix) -> Result<DMatrix<f64>> {
    if x.ncols() != a.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, transformation has {} rows",
            x.ncols(),
            a.n_features()
        )));
    }
    let n = x.nrows();
    let mut z = DMatrix::<f64>::zeros(n, a.n_clusters());
    for (j, &c) in a.labels.iter().enumerate() {
        let w = 1.0 / a.sizes[c] as f64;
        let mut zc = z.column_mut(c);
        zc.axpy(w, &x.column(j), 1.0);
    }
    Ok(z)
}

/// Compressed weights under block-independent groups:
/// `θ_c = |G_c| Σ_{j∈G_c} w_j β_j` with
/// `w_j = Σ_{k∈G_c} Σ_{jk} / Σ_{k,k'∈G_c} Σ_{kk'}`.
pub fn compressed_weights_oracle(sigma: &DMatrix<f64>, c: &Clustering, beta: &WeightMap) -> Result<DVector<f64>> {
    let p = c.n_features();
    if sigma.nrows() != p || sigma.ncols() != p || beta.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance {}x{}, weights {}, clustering over {p}",
            sigma.nrows(),
            sigma.ncols(),
            beta.len()
        )));
    }
    let mut theta = DVector::zeros(c.n_clusters());
    for (g, members) in c.groups().iter().enumerate() {
        let mass: f64 = members
            .iter()
            .flat_map(|&k| members.iter().map(move |&l| (k, l)))
            .map(|(k, l)| sigma[(k, l)])
            .sum();
        if mass.abs() <= f64::EPSILON * members.len() as f64 {
            return Err(Error::DegenerateGroup { group: g });
        }
        let mut acc = 0.0;
        for &j in members {
            let row: f64 = members.iter().map(|&k| sigma[(j, k)]).sum();
            acc += row / mass * beta.beta()[j];
        }
        theta[g] = members.len() as f64 * acc;
    }
    Ok(theta)
}
