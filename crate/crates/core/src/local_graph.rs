//! Local region affinities from co-occurrence statistics.
//!
//! For each of the six region feature channels (rescaled Lab mean and the
//! scaled RGB covariance diagonal), a kernel density estimate over the
//! values of nearby region pairs yields a joint distribution P(v_i, v_j)
//! and its marginal P(v). The pointwise mutual information
//! `co = log(P(v_i,v_j) / (P(v_i) P(v_j)))` scores how much more often two
//! values co-occur in close pairs than chance predicts, and the affinity
//! between two regions is `exp` of the channel sum of these scores.

use ndarray::Array2;
use num_traits::Float;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::regions::{RegionFeatures, RegionMap};
use crate::scalar::{count, flt, Real};
use crate::sparse::CsrMatrix;

/// Number of feature channels scored by the co-occurrence model.
pub const CO_CHANNELS: usize = 6;

/// Kernel density model of feature co-occurrence between nearby regions.
///
/// Holds one joint `bins x bins` grid and one marginal over `bins` cells per
/// channel, both normalized to total mass 1, plus the per-channel kernel
/// bandwidth. Densities are read back by (bi)linear interpolation and
/// floored before logs.
#[derive(Debug, Clone)]
pub struct CoOccurrenceModel<F> {
    bins: usize,
    e1: F,
    joint: Vec<Array2<F>>,
    marginal: Vec<Vec<F>>,
    bandwidths: [F; CO_CHANNELS],
    density_floor: F,
    n_pairs: usize,
}

/// Sparse symmetric region affinity matrix with its degree diagonal.
#[derive(Debug, Clone)]
pub struct LocalAffinity<F> {
    pub w: CsrMatrix<F>,
    pub degree: Vec<F>,
}

/// All unordered region pairs with centroid distance at most `radius`.
fn pairs_within<F: Real>(regions: &RegionMap<F>, radius: F) -> Vec<(u32, u32)> {
    let n = regions.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if regions.centroid_distance(i, j) <= radius {
                out.push((i as u32, j as u32));
            }
        }
    }
    out
}

/// For each region, its nearest other region (ties: lower id), deduplicated.
fn nearest_pairs<F: Real>(regions: &RegionMap<F>) -> Vec<(u32, u32)> {
    let n = regions.len();
    let mut set = BTreeSet::new();
    for i in 0..n {
        let j = nearest_region(regions, i);
        set.insert((i.min(j) as u32, i.max(j) as u32));
    }
    set.into_iter().collect()
}

fn nearest_region<F: Real>(regions: &RegionMap<F>, i: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_d = F::infinity();
    for j in 0..regions.len() {
        if j == i {
            continue;
        }
        let d = regions.centroid_distance(i, j);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Silverman rule-of-thumb bandwidth for a 2-D KDE built from `n_pairs`
/// symmetrized samples whose pooled coordinate values are `values`.
fn silverman<F: Real>(values: &[F], n_pairs: usize) -> F {
    let floor = flt::<F>(0.02);
    if values.len() < 2 || n_pairs == 0 {
        return floor;
    }
    let n = count::<F>(values.len());
    let mean = values.iter().cloned().sum::<F>() / n;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / (n - F::one());
    let sigma = Float::sqrt(Float::max(var, F::zero()));
    let h = sigma * Float::powf(count::<F>(n_pairs), flt::<F>(-1.0 / 6.0));
    if h.is_finite() {
        Float::max(h, floor)
    } else {
        floor
    }
}

/// Continuous bin coordinate of `v` under bin centers (b + 0.5) / bins,
/// split into the two bracketing cells and the interpolation weight.
fn grid_coord<F: Real>(v: F, bins: usize) -> (usize, usize, F) {
    let bf = count::<F>(bins);
    let half = flt::<F>(0.5);
    let u = Float::max(F::zero(), Float::min(bf - F::one(), v * bf - half));
    let i0 = Float::floor(u).to_usize().unwrap_or(0).min(bins - 1);
    let i1 = (i0 + 1).min(bins - 1);
    (i0, i1, u - count::<F>(i0))
}

/// Fits the per-channel co-occurrence densities over all unordered region
/// pairs with centroid distance at most `e1`.
///
/// `bandwidth` of `None` selects Silverman's rule per channel (floored at
/// 0.02). If no pair lies within `e1`, each region is paired with its
/// nearest region instead and a warning is logged.
pub fn fit_cooccurrence<F: Real>(
    regions: &RegionMap<F>,
    feats: &RegionFeatures<F>,
    e1: F,
    bandwidth: Option<F>,
    bins: usize,
    density_floor: F,
) -> Result<CoOccurrenceModel<F>> {
    if regions.len() < 2 {
        return Err(Error::Model(format!(
            "co-occurrence model needs at least 2 regions, got {}",
            regions.len()
        )));
    }
    if feats.len() != regions.len() {
        return Err(Error::Dimension {
            expected: format!("{} feature rows", regions.len()),
            got: format!("{}", feats.len()),
        });
    }
    if !(e1 > F::zero()) {
        return Err(Error::Contract("e1 must be positive".into()));
    }
    if bins < 8 {
        return Err(Error::Contract(format!("bins must be >= 8, got {bins}")));
    }
    if !(density_floor > F::zero()) {
        return Err(Error::Contract("density floor must be positive".into()));
    }

    let mut pairs = pairs_within(regions, e1);
    if pairs.is_empty() {
        log::warn!("no region pairs within sampling distance; falling back to nearest neighbors");
        pairs = nearest_pairs(regions);
    }
    let n_pairs = pairs.len();

    let channels: Vec<[F; CO_CHANNELS]> =
        (0..regions.len()).map(|i| feats.co_channels(i)).collect();

    let half = flt::<F>(0.5);
    let centers: Vec<F> = (0..bins)
        .map(|b| (count::<F>(b) + half) / count::<F>(bins))
        .collect();

    let mut joint = Vec::with_capacity(CO_CHANNELS);
    let mut marginal = Vec::with_capacity(CO_CHANNELS);
    let mut bandwidths = [F::zero(); CO_CHANNELS];
    for ch in 0..CO_CHANNELS {
        let mut pooled = Vec::with_capacity(2 * n_pairs);
        for &(i, j) in &pairs {
            pooled.push(channels[i as usize][ch]);
            pooled.push(channels[j as usize][ch]);
        }
        let h = bandwidth.unwrap_or_else(|| silverman(&pooled, n_pairs));
        bandwidths[ch] = h;

        // Joint grid: each pair contributes a separable bump in both
        // orientations, so the accumulated grid is bitwise symmetric.
        let mut grid: Array2<F> = Array2::zeros((bins, bins));
        let mut ga = vec![F::zero(); bins];
        let mut gb = vec![F::zero(); bins];
        for &(i, j) in &pairs {
            let a = channels[i as usize][ch];
            let b = channels[j as usize][ch];
            for (k, &c) in centers.iter().enumerate() {
                let ta = (c - a) / h;
                let tb = (c - b) / h;
                ga[k] = Float::exp(-half * ta * ta);
                gb[k] = Float::exp(-half * tb * tb);
            }
            for p in 0..bins {
                for q in 0..bins {
                    grid[[p, q]] += ga[p] * gb[q] + gb[p] * ga[q];
                }
            }
        }
        let total: F = grid.iter().cloned().sum();
        if total > F::zero() {
            grid.mapv_inplace(|v| v / total);
        }
        joint.push(grid);

        let mut marg = vec![F::zero(); bins];
        for &x in &pooled {
            for (k, &c) in centers.iter().enumerate() {
                let t = (c - x) / h;
                marg[k] += Float::exp(-half * t * t);
            }
        }
        let mtotal: F = marg.iter().cloned().sum();
        if mtotal > F::zero() {
            for v in &mut marg {
                *v /= mtotal;
            }
        }
        marginal.push(marg);
    }

    Ok(CoOccurrenceModel {
        bins,
        e1,
        joint,
        marginal,
        bandwidths,
        density_floor,
        n_pairs,
    })
}

impl<F: Real> CoOccurrenceModel<F> {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn bandwidth(&self, channel: usize) -> F {
        self.bandwidths[channel]
    }

    pub fn joint_grid(&self, channel: usize) -> &Array2<F> {
        &self.joint[channel]
    }

    pub fn marginal_grid(&self, channel: usize) -> &[F] {
        &self.marginal[channel]
    }

    fn bilinear(&self, channel: usize, x: F, y: F) -> F {
        let g = &self.joint[channel];
        let (x0, x1, tx) = grid_coord(x, self.bins);
        let (y0, y1, ty) = grid_coord(y, self.bins);
        let one = F::one();
        (one - tx) * ((one - ty) * g[[x0, y0]] + ty * g[[x0, y1]])
            + tx * ((one - ty) * g[[x1, y0]] + ty * g[[x1, y1]])
    }

    fn lerp_marginal(&self, channel: usize, x: F) -> F {
        let m = &self.marginal[channel];
        let (i0, i1, t) = grid_coord(x, self.bins);
        (F::one() - t) * m[i0] + t * m[i1]
    }

    /// Pointwise mutual information of a value pair on one channel:
    /// `log(P(v_i,v_j) / (P(v_i) P(v_j)))`, densities floored before logs.
    ///
    /// The joint is floored at `density_floor` and the marginals at its
    /// square root, so both floors describe the same virtual uniform: a
    /// pair of values never seen in training scores as independent (co 0)
    /// instead of inheriting a spurious ratio from cancelling floors.
    ///
    /// Evaluated on the sorted pair, so `co(ch, a, b)` and `co(ch, b, a)`
    /// are bit-equal.
    pub fn co(&self, channel: usize, v_i: F, v_j: F) -> F {
        let (a, b) = if v_i <= v_j { (v_i, v_j) } else { (v_j, v_i) };
        let marg_floor = Float::sqrt(self.density_floor);
        let pj = Float::max(self.bilinear(channel, a, b), self.density_floor);
        let pa = Float::max(self.lerp_marginal(channel, a), marg_floor);
        let pb = Float::max(self.lerp_marginal(channel, b), marg_floor);
        Float::ln(pj) - Float::ln(pa) - Float::ln(pb)
    }

    /// Channel sum of [`co`](Self::co) over two feature vectors.
    pub fn co_sum(&self, a: &[F; CO_CHANNELS], b: &[F; CO_CHANNELS]) -> F {
        (0..CO_CHANNELS).map(|ch| self.co(ch, a[ch], b[ch])).sum()
    }

    pub fn density_floor(&self) -> F {
        self.density_floor
    }
}

/// Assembles the sparse affinity matrix `W_ij = exp(Σ_ch co)` over region
/// pairs with centroid distance at most `e2`, plus the degree diagonal.
///
/// The channel sum is clamped to `±log_clip` before exponentiation so a
/// single extreme density ratio cannot dominate the operator's scaling. A
/// region with no neighbor within `e2` is connected to its nearest region
/// at the clamped weight floor and a warning is logged.
pub fn build_affinity<F: Real>(
    regions: &RegionMap<F>,
    feats: &RegionFeatures<F>,
    model: &CoOccurrenceModel<F>,
    e2: F,
    log_clip: F,
) -> Result<LocalAffinity<F>> {
    let n = regions.len();
    if n < 2 {
        return Err(Error::Model(format!(
            "affinity graph needs at least 2 regions, got {n}"
        )));
    }
    if !(e2 > model.e1) {
        return Err(Error::Contract(
            "affinity radius e2 must exceed the sampling radius e1".into(),
        ));
    }
    if !(log_clip > F::zero()) {
        return Err(Error::Contract("log clip must be positive".into()));
    }

    let channels: Vec<[F; CO_CHANNELS]> = (0..n).map(|i| feats.co_channels(i)).collect();
    let clamp = |s: F| Float::max(-log_clip, Float::min(log_clip, s));

    let mut weights: BTreeMap<(u32, u32), F> = BTreeMap::new();
    for (i, j) in pairs_within(regions, e2) {
        let s = model.co_sum(&channels[i as usize], &channels[j as usize]);
        weights.insert((i, j), Float::exp(clamp(s)));
    }

    let mut connected = vec![false; n];
    for &(i, j) in weights.keys() {
        connected[i as usize] = true;
        connected[j as usize] = true;
    }
    // Lowest representable affinity: every density at its floor.
    let floor_w = Float::exp(clamp(
        count::<F>(CO_CHANNELS) * Float::ln(model.density_floor),
    ));
    for i in 0..n {
        if connected[i] {
            continue;
        }
        let j = nearest_region(regions, i);
        log::warn!("region {i} has no neighbor in affinity range; attaching to region {j}");
        weights
            .entry((i.min(j) as u32, i.max(j) as u32))
            .or_insert(floor_w);
        connected[i] = true;
        connected[j] = true;
    }

    let mut triplets = Vec::with_capacity(weights.len() * 2);
    for (&(i, j), &w) in &weights {
        triplets.push((i as usize, j as usize, w));
        triplets.push((j as usize, i as usize, w));
    }
    let w = CsrMatrix::from_triplets(n, n, triplets);
    let degree: Vec<F> = (0..n).map(|r| w.row(r).map(|(_, v)| v).sum()).collect();
    if let Some(i) = degree.iter().position(|&d| !(d > F::zero())) {
        return Err(Error::Invariant(format!("region {i} has zero degree")));
    }
    Ok(LocalAffinity { w, degree })
}

impl<F: Real> LocalAffinity<F> {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    /// Checks symmetry, a zero diagonal, positive stored weights, and
    /// positive degrees.
    pub fn validate(&self) -> Result<()> {
        if self.w.symmetry_gap() != F::zero() {
            return Err(Error::Invariant("affinity matrix is not symmetric".into()));
        }
        for r in 0..self.w.n_rows() {
            for (c, v) in self.w.row(r) {
                if c == r {
                    return Err(Error::Invariant(format!("diagonal entry stored at {r}")));
                }
                if !(v > F::zero()) {
                    return Err(Error::Invariant(format!(
                        "nonpositive affinity at ({r},{c})"
                    )));
                }
            }
        }
        for (i, &d) in self.degree.iter().enumerate() {
            let sum: F = self.w.row(i).map(|(_, v)| v).sum();
            if !(d > F::zero()) || d != sum {
                return Err(Error::Invariant(format!("degree mismatch at {i}")));
            }
        }
        Ok(())
    }

    /// Debug dump as coordinate-list CSV rows `i,j,w`.
    pub fn write_coo_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in 0..self.w.n_rows() {
            for (c, v) in self.w.row(r) {
                writeln!(out, "{},{},{}", r, c, v.to_f64().unwrap_or(f64::NAN))
                    .expect("write to Vec cannot fail");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Region features with hand-set channel values. Channel 0 is driven
    /// through the Lab L rescaling (L = 100 v); channels 3..6 through the
    /// covariance scaling (cov = v / 4).
    fn synth_features(values: &[[f64; CO_CHANNELS]]) -> RegionFeatures<f64> {
        let n = values.len();
        let mut lab_mean = Vec::with_capacity(n);
        let mut cov_mean = Vec::with_capacity(n);
        for v in values {
            lab_mean.push([100.0 * v[0], 255.0 * v[1] - 128.0, 255.0 * v[2] - 128.0]);
            cov_mean.push([v[3] / 4.0, v[4] / 4.0, v[5] / 4.0]);
        }
        RegionFeatures {
            lab_mean,
            cov_mean,
            saliency: vec![0.0; n],
            saliency_dim: 1,
            gray: vec![0.0; n],
        }
    }

    /// Single-pixel regions on one row: centroid distance = index distance.
    fn strip_regions(n: usize) -> RegionMap<f64> {
        let raw = Array2::from_shape_fn((1, n), |(_, c)| c as u32);
        RegionMap::from_labels(&raw).unwrap()
    }

    /// Channel vectors that hit the synthesizable targets exactly.
    fn const_channels(v: f64) -> [f64; CO_CHANNELS] {
        [v; CO_CHANNELS]
    }

    #[test]
    fn hand_built_grid_matches_kernel_sum_oracle() {
        // 4 regions in a strip, e1 = 1.5 -> exactly the 3 consecutive pairs.
        let regions = strip_regions(4);
        let vals = [
            const_channels(0.2),
            const_channels(0.5),
            const_channels(0.65),
            const_channels(0.9),
        ];
        let feats = synth_features(&vals);
        let (h, bins) = (0.1, 16);
        let model =
            fit_cooccurrence(&regions, &feats, 1.5, Some(h), bins, 1e-8).unwrap();
        assert_eq!(model.n_pairs(), 3);

        // Oracle: plain 2-D kernel sum over the 6 symmetrized samples,
        // computed with true 2-D exponentials rather than separable factors.
        let samples = [(0.2, 0.5), (0.5, 0.65), (0.65, 0.9)];
        let center = |b: usize| (b as f64 + 0.5) / bins as f64;
        let mut oracle = vec![vec![0.0f64; bins]; bins];
        let mut total = 0.0;
        for p in 0..bins {
            for q in 0..bins {
                let (cx, cy) = (center(p), center(q));
                let mut acc = 0.0;
                for &(a, b) in &samples {
                    for (sx, sy) in [(a, b), (b, a)] {
                        let d2 = (cx - sx).powi(2) + (cy - sy).powi(2);
                        acc += (-d2 / (2.0 * h * h)).exp();
                    }
                }
                oracle[p][q] = acc;
                total += acc;
            }
        }
        for row in &mut oracle {
            for v in row.iter_mut() {
                *v /= total;
            }
        }

        let grid = model.joint_grid(0);
        for p in 0..bins {
            for q in 0..bins {
                let got = grid[[p, q]];
                let want = oracle[p][q];
                assert!(
                    (got - want).abs() <= 1e-9 * want.max(1e-12),
                    "cell ({p},{q}): got {got}, oracle {want}"
                );
            }
        }

        // Marginal oracle over the 6 pooled coordinates.
        let pooled = [0.2, 0.5, 0.5, 0.65, 0.65, 0.9];
        let mut morer = vec![0.0f64; bins];
        let mut mtotal = 0.0;
        for (b, v) in morer.iter_mut().enumerate() {
            let c = center(b);
            for &s in &pooled {
                *v += (-((c - s) / h).powi(2) / 2.0).exp();
            }
            mtotal += *v;
        }
        for (b, &want) in morer.iter().enumerate() {
            let want = want / mtotal;
            let got = model.marginal_grid(0)[b];
            assert!((got - want).abs() <= 1e-9 * want.max(1e-12), "marginal bin {b}");
        }

        // co at a bump center against the oracle's interpolated log-ratio.
        let co_oracle = |x: f64, y: f64| {
            let interp2 = |x: f64, y: f64| {
                let coord = |v: f64| {
                    let u = (v * bins as f64 - 0.5).clamp(0.0, bins as f64 - 1.0);
                    let i0 = (u.floor() as usize).min(bins - 1);
                    (i0, (i0 + 1).min(bins - 1), u - i0 as f64)
                };
                let (x0, x1, tx) = coord(x);
                let (y0, y1, ty) = coord(y);
                (1.0 - tx) * ((1.0 - ty) * oracle[x0][y0] + ty * oracle[x0][y1])
                    + tx * ((1.0 - ty) * oracle[x1][y0] + ty * oracle[x1][y1])
            };
            let interp1 = |v: f64| {
                let u = (v * bins as f64 - 0.5).clamp(0.0, bins as f64 - 1.0);
                let i0 = (u.floor() as usize).min(bins - 1);
                let (i1, t) = ((i0 + 1).min(bins - 1), u - i0 as f64);
                ((1.0 - t) * morer[i0] + t * morer[i1]) / mtotal
            };
            interp2(x, y).max(1e-8).ln() - interp1(x).max(1e-4).ln() - interp1(y).max(1e-4).ln()
        };
        for &(a, b) in &samples {
            let got = model.co(0, a, b);
            let want = co_oracle(a.min(b), a.max(b));
            assert!(
                (got - want).abs() < 1e-6,
                "co({a},{b}): got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn co_is_symmetric_bitwise() {
        let regions = strip_regions(5);
        let vals: Vec<_> = (0..5)
            .map(|i| const_channels(0.15 + 0.17 * i as f64))
            .collect();
        let feats = synth_features(&vals);
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 32, 1e-8).unwrap();
        for ch in 0..CO_CHANNELS {
            for a in [0.0, 0.13, 0.5, 0.77, 1.0] {
                for b in [0.0, 0.31, 0.5, 0.99] {
                    assert_eq!(model.co(ch, a, b), model.co(ch, b, a));
                }
            }
        }
        for ch in 0..CO_CHANNELS {
            let g = model.joint_grid(ch);
            for p in 0..32 {
                for q in 0..p {
                    assert_eq!(g[[p, q]], g[[q, p]], "grid asymmetry at ({p},{q})");
                }
            }
        }
    }

    #[test]
    fn degenerate_identical_model_peaks_at_the_shared_value() {
        let regions = strip_regions(6);
        let feats = synth_features(&vec![const_channels(0.5); 6]);
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 64, 1e-8).unwrap();
        // All samples identical: sigma = 0, so the bandwidth floor applies.
        assert_eq!(model.bandwidth(0), 0.02);
        let peak = model.co(0, 0.5, 0.5);
        // Pairing the shared value with an unseen one must score far lower.
        for v in [0.1, 0.3, 0.7, 0.9] {
            assert!(
                peak > model.co(0, 0.5, v) + 1.0,
                "co(0.5,0.5)={peak} not above co(0.5,{v})={}",
                model.co(0, 0.5, v)
            );
        }
        // No value pair anywhere scores above the shared value's pair.
        for x in 0..=20 {
            for y in 0..=20 {
                let c = model.co(0, x as f64 / 20.0, y as f64 / 20.0);
                assert!(c <= peak + 1e-9, "co({x}/20,{y}/20)={c} above peak {peak}");
            }
        }
    }

    #[test]
    fn independent_values_give_near_zero_co() {
        use rand::{Rng, SeedableRng};
        let n = 1200;
        let regions = strip_regions(n);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<_> = (0..n)
            .map(|_| const_channels(rng.random_range(0.0..1.0)))
            .collect();
        let feats = synth_features(&vals);
        // Adjacent pairs only: members are independent uniforms.
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 64, 1e-8).unwrap();
        for x in [0.3, 0.5, 0.7] {
            for y in [0.35, 0.6] {
                let co = model.co(0, x, y);
                assert!(co.abs() < 0.35, "co({x},{y}) = {co}, expected ~0");
            }
        }
    }

    #[test]
    fn affinity_matches_elementwise_oracle() {
        let regions = strip_regions(4);
        let vals = [
            const_channels(0.2),
            const_channels(0.4),
            const_channels(0.6),
            const_channels(0.8),
        ];
        let feats = synth_features(&vals);
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 32, 1e-8).unwrap();
        let aff = build_affinity(&regions, &feats, &model, 2.5, 15.0).unwrap();
        aff.validate().unwrap();

        for i in 0..4usize {
            for j in 0..4usize {
                let got = aff.w.get(i, j);
                let d = (i as f64 - j as f64).abs();
                if i == j || d > 2.5 {
                    assert_eq!(got, 0.0, "({i},{j}) should be unconnected");
                } else {
                    let mut s = 0.0;
                    for ch in 0..CO_CHANNELS {
                        s += model.co(ch, vals[i][ch], vals[j][ch]);
                    }
                    let want = s.clamp(-15.0, 15.0).exp();
                    assert!(
                        (got - want).abs() <= 1e-9 * want,
                        "({i},{j}): got {got}, oracle {want}"
                    );
                }
            }
        }
        for i in 0..4 {
            let want: f64 = (0..4).map(|j| aff.w.get(i, j)).sum();
            assert_eq!(aff.degree[i], want);
        }
    }

    #[test]
    fn affinity_is_bit_symmetric_and_positive() {
        use rand::{Rng, SeedableRng};
        let n = 30;
        let regions = strip_regions(n);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<_> = (0..n)
            .map(|_| {
                let mut v = const_channels(0.0);
                for c in v.iter_mut() {
                    *c = rng.random_range(0.0..1.0);
                }
                v
            })
            .collect();
        let feats = synth_features(&vals);
        let model = fit_cooccurrence(&regions, &feats, 3.0, None, 32, 1e-8).unwrap();
        let aff = build_affinity(&regions, &feats, &model, 6.0, 15.0).unwrap();
        assert_eq!(aff.w.symmetry_gap(), 0.0);
        aff.validate().unwrap();
    }

    #[test]
    fn isolated_region_is_attached_to_its_nearest() {
        // Regions 0-3 cluster at 10px spacing; region 4's centroid (119.5)
        // is 85px from its closest neighbor, beyond the affinity range.
        let mut labels = Array2::zeros((1, 200));
        for c in 0..200 {
            labels[[0, c]] = ((c / 10).min(4)) as u32;
        }
        let regions: RegionMap<f64> = RegionMap::from_labels(&labels).unwrap();
        let vals: Vec<_> = (0..5)
            .map(|i| const_channels(0.2 + 0.15 * i as f64))
            .collect();
        let feats = synth_features(&vals);
        let model = fit_cooccurrence(&regions, &feats, 11.0, None, 32, 1e-8).unwrap();
        let aff = build_affinity(&regions, &feats, &model, 50.0, 15.0).unwrap();
        aff.validate().unwrap();
        // Attached to region 3 (the nearest) at the weight floor, nowhere else.
        assert_eq!(aff.w.get(4, 3), (-15.0f64).exp());
        assert_eq!(aff.w.get(3, 4), (-15.0f64).exp());
        for j in 0..3 {
            assert_eq!(aff.w.get(4, j), 0.0);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let one = RegionMap::<f64>::from_labels(&Array2::zeros((2, 2))).unwrap();
        let feats1 = synth_features(&[const_channels(0.5)]);
        assert!(matches!(
            fit_cooccurrence(&one, &feats1, 1.0, None, 16, 1e-8),
            Err(Error::Model(_))
        ));

        let regions = strip_regions(3);
        let feats = synth_features(&[
            const_channels(0.1),
            const_channels(0.5),
            const_channels(0.9),
        ]);
        assert!(fit_cooccurrence(&regions, &feats, 0.0, None, 16, 1e-8).is_err());
        assert!(fit_cooccurrence(&regions, &feats, 1.0, None, 4, 1e-8).is_err());
        let model = fit_cooccurrence(&regions, &feats, 1.5, None, 16, 1e-8).unwrap();
        // e2 must exceed e1.
        assert!(build_affinity(&regions, &feats, &model, 1.5, 15.0).is_err());
    }

    #[test]
    fn distant_pairs_fall_back_to_nearest_neighbors() {
        let regions = strip_regions(3);
        let feats = synth_features(&[
            const_channels(0.1),
            const_channels(0.5),
            const_channels(0.9),
        ]);
        // e1 far below the unit spacing: sampling falls back, model fits.
        let model = fit_cooccurrence(&regions, &feats, 0.25, None, 16, 1e-8).unwrap();
        assert_eq!(model.n_pairs(), 2);
    }

    #[test]
    fn channel_sum_is_order_independent() {
        let regions = strip_regions(4);
        let vals = [
            [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            [0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            [0.2, 0.8, 0.2, 0.8, 0.2, 0.8],
            [0.9, 0.1, 0.9, 0.1, 0.9, 0.1],
        ];
        let feats = synth_features(&vals);
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 16, 1e-8).unwrap();
        let a = vals[0];
        let b = vals[2];
        let forward = model.co_sum(&a, &b);
        let mut reversed = 0.0;
        for ch in (0..CO_CHANNELS).rev() {
            reversed += model.co(ch, a[ch], b[ch]);
        }
        assert!((forward - reversed).abs() < 1e-12);
    }

    #[test]
    fn coo_dump_roundtrips_entry_count() {
        let regions = strip_regions(3);
        let feats = synth_features(&[
            const_channels(0.2),
            const_channels(0.5),
            const_channels(0.8),
        ]);
        let model = fit_cooccurrence(&regions, &feats, 1.2, None, 16, 1e-8).unwrap();
        let aff = build_affinity(&regions, &feats, &model, 2.2, 15.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        aff.write_coo_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), aff.w.nnz());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn affinities_stay_within_clip_bounds(seed in 0u64..500, n in 3usize..12) {
                use rand::{Rng, SeedableRng};
                let regions = strip_regions(n);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let vals: Vec<_> = (0..n).map(|_| {
                    let mut v = [0.0; CO_CHANNELS];
                    for c in v.iter_mut() { *c = rng.random_range(0.0..1.0); }
                    v
                }).collect();
                let feats = synth_features(&vals);
                let model = fit_cooccurrence(&regions, &feats, 1.5, None, 16, 1e-8).unwrap();
                let clip = 15.0;
                let aff = build_affinity(&regions, &feats, &model, 4.0, clip).unwrap();
                for r in 0..n {
                    for (c, v) in aff.w.row(r) {
                        prop_assert!(c != r);
                        prop_assert!(v >= (-clip).exp() && v <= clip.exp());
                    }
                }
                prop_assert!(aff.validate().is_ok());
            }
        }
    }
}
