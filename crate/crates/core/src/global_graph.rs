//! Directed global connections between feature-similar distant regions.
//!
//! Each region picks the R regions most similar in saliency-feature space
//! from a candidate pool bounded by a wraparound ("geodesic") image
//! distance, then reconstructs its own feature vector as an affine
//! combination of the neighbors'. The coefficient rows form a sparse
//! matrix K whose rows sum to 1, so I - K annihilates constants and
//! (I - K)^T (I - K) penalizes deviations from the learned linear
//! structure.

use num_traits::Float;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::regions::{RegionFeatures, RegionMap};
use crate::scalar::{count, flt, Real};
use crate::sparse::CsrMatrix;

/// Sparse directed reconstruction coefficients, one row per region.
#[derive(Debug, Clone)]
pub struct GlobalCoefficients<F> {
    pub k: CsrMatrix<F>,
    pub r: usize,
    pub alpha: F,
}

/// Image-plane distance with wraparound along both axes, as if the image
/// edges were glued: each axis difference is the shorter of the direct and
/// the wrapped path.
///
/// Centroids are (row, col); `width` and `height` are the image extents.
pub fn geodesic_distance<F: Real>(c_i: [F; 2], c_j: [F; 2], width: F, height: F) -> F {
    let dh = Float::abs(c_i[0] - c_j[0]);
    let dw = Float::abs(c_i[1] - c_j[1]);
    let dh = Float::min(dh, height - dh);
    let dw = Float::min(dw, width - dw);
    Float::sqrt(dh * dh + dw * dw)
}

fn saliency_distance<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
}

/// The up-to-R regions most similar to region `i` in saliency space, drawn
/// from the pool of regions within geodesic `range` of `i`.
///
/// Ranking is by squared Euclidean saliency distance, ties by lower id. A
/// pool smaller than R is returned whole with a warning; an empty pool
/// falls back to all other regions.
pub fn select_neighbors<F: Real>(
    regions: &RegionMap<F>,
    feats: &RegionFeatures<F>,
    i: usize,
    r: usize,
    range: F,
) -> Result<Vec<u32>> {
    if r == 0 {
        return Err(Error::Contract("neighbor count R must be >= 1".into()));
    }
    let n = regions.len();
    let (h, w) = regions.dims();
    let (wf, hf) = (count::<F>(w), count::<F>(h));
    let ci = regions.centroid(i);
    let mut pool: Vec<usize> = (0..n)
        .filter(|&j| j != i && geodesic_distance(ci, regions.centroid(j), wf, hf) <= range)
        .collect();
    if pool.is_empty() {
        log::warn!("region {i} has an empty geodesic candidate pool; using all regions");
        pool = (0..n).filter(|&j| j != i).collect();
    }
    let si = feats.saliency_of(i);
    let mut ranked: Vec<(F, usize)> = pool
        .into_iter()
        .map(|j| (saliency_distance(si, feats.saliency_of(j)), j))
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    if ranked.len() < r {
        log::warn!(
            "region {i}: candidate pool has {} regions, fewer than R = {r}",
            ranked.len()
        );
    }
    ranked.truncate(r);
    Ok(ranked.into_iter().map(|(_, j)| j as u32).collect())
}

/// Coefficients reconstructing region `i`'s saliency vector from its
/// neighbors' under a sum-to-one constraint.
///
/// Closed form: with centered differences d_j = sigma(j) - sigma(i) and
/// Gram G_jk = d_j . d_k, solve (G + alpha I) w = 1 and normalize w to sum
/// 1. The regularizer makes the system positive definite, so the solve
/// cannot fail and the normalizer is positive.
pub fn solve_coefficients<F: Real>(
    feats: &RegionFeatures<F>,
    i: usize,
    neighbors: &[u32],
    alpha: F,
) -> Result<Vec<F>> {
    if neighbors.is_empty() {
        return Err(Error::Contract("coefficient solve needs neighbors".into()));
    }
    if !(alpha > F::zero()) {
        return Err(Error::Contract("alpha must be positive".into()));
    }
    let m = neighbors.len();
    let si = feats.saliency_of(i);
    let dim = feats.saliency_dim;
    let mut diffs = vec![F::zero(); m * dim];
    for (row, &j) in neighbors.iter().enumerate() {
        let sj = feats.saliency_of(j as usize);
        for k in 0..dim {
            diffs[row * dim + k] = sj[k] - si[k];
        }
    }
    let mut g = nalgebra::DMatrix::<F>::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let dot = (0..dim)
                .map(|k| diffs[a * dim + k] * diffs[b * dim + k])
                .sum::<F>();
            g[(a, b)] = dot;
            g[(b, a)] = dot;
        }
        g[(a, a)] += alpha;
    }
    let ones = nalgebra::DVector::<F>::from_element(m, F::one());
    let w = g
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::Model("regularized Gram system was singular".into()))?;
    let total: F = w.iter().cloned().sum();
    if !(total != F::zero() && total.is_finite()) {
        return Err(Error::Model("coefficient normalizer vanished".into()));
    }
    Ok(w.iter().map(|&v| v / total).collect())
}

/// Assembles K row by row from neighbor selection and coefficient solves.
pub fn build_global<F: Real>(
    regions: &RegionMap<F>,
    feats: &RegionFeatures<F>,
    r: usize,
    alpha: F,
    range: F,
) -> Result<GlobalCoefficients<F>> {
    let n = regions.len();
    if n < 2 {
        return Err(Error::Model(format!(
            "global coefficients need at least 2 regions, got {n}"
        )));
    }
    if feats.len() != n {
        return Err(Error::Dimension {
            expected: format!("{n} feature rows"),
            got: format!("{}", feats.len()),
        });
    }
    let mut triplets = Vec::with_capacity(n * r);
    for i in 0..n {
        let neighbors = select_neighbors(regions, feats, i, r, range)?;
        let coeffs = solve_coefficients(feats, i, &neighbors, alpha)?;
        for (&j, &w) in neighbors.iter().zip(&coeffs) {
            triplets.push((i, j as usize, w));
        }
    }
    let k = CsrMatrix::from_triplets(n, n, triplets);
    let out = GlobalCoefficients { k, r, alpha };
    out.validate()?;
    Ok(out)
}

impl<F: Real> GlobalCoefficients<F> {
    /// Checks the zero diagonal, the per-row entry budget, and the row sums.
    pub fn validate(&self) -> Result<()> {
        let n = self.k.n_rows();
        let tol = Float::max(
            flt::<F>(1e-10),
            count::<F>(self.r.max(1)) * flt::<F>(8.0) * F::epsilon(),
        );
        for i in 0..n {
            let mut sum = F::zero();
            let mut nnz = 0;
            for (j, v) in self.k.row(i) {
                if j == i {
                    return Err(Error::Invariant(format!("K has a diagonal entry at {i}")));
                }
                sum += v;
                nnz += 1;
            }
            if nnz > self.r {
                return Err(Error::Invariant(format!(
                    "row {i} has {nnz} entries, more than R = {}",
                    self.r
                )));
            }
            if Float::abs(sum - F::one()) > tol {
                return Err(Error::Invariant(format!(
                    "row {i} sums to {:?}, not 1",
                    sum.to_f64()
                )));
            }
        }
        Ok(())
    }

    /// Debug dump as coordinate-list CSV rows `i,j,k`.
    pub fn write_coo_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in 0..self.k.n_rows() {
            for (c, v) in self.k.row(r) {
                writeln!(out, "{},{},{}", r, c, v.to_f64().unwrap_or(f64::NAN))
                    .expect("write to Vec cannot fail");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
