//! From eigenvectors to a hierarchical labeling: histogram descriptors over
//! the segmentation tree, a k-means prior, exact expansion moves for the
//! tree-structured random field, and the averaged boundary map.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maxflow::BinaryEnergy;
use crate::regions::{BoundaryStats, RegionMap, SegTree};
use crate::scalar::{count, flt, Real};
use crate::spectral::normalize_eigenvector;

/// Per-dimension histogram descriptor: `d` blocks of `l` bins each, every
/// block normalized to sum 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenHistogram<F> {
    values: Vec<F>,
    l: usize,
}

impl<F: Real> EigenHistogram<F> {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dims(&self) -> usize {
        self.values.len() / self.l
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn get(&self, dim: usize, bin: usize) -> F {
        self.values[dim * self.l + bin]
    }

    pub fn dot(&self, other: &EigenHistogram<F>) -> F {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() % self.l != 0 || self.values.is_empty() {
            return Err(Error::Invariant("histogram length is not d*l".into()));
        }
        if self.values.iter().any(|&v| v < F::zero()) {
            return Err(Error::Invariant("histogram has a negative entry".into()));
        }
        let tol = flt::<F>(1e-9);
        for block in self.values.chunks(self.l) {
            let sum: F = block.iter().cloned().sum();
            if Float::abs(sum - F::one()) > tol {
                return Err(Error::Invariant(format!(
                    "histogram block sums to {:?}",
                    sum.to_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Bin index of a value in [0,1] over `l` uniform bins; the last bin is
/// right-closed so 1.0 lands in bin l-1.
pub fn histogram_bin<F: Real>(v: F, l: usize) -> usize {
    let v = Float::min(Float::max(v, F::zero()), F::one());
    let raw = (v * count::<F>(l)).to_usize().unwrap_or(0);
    raw.min(l - 1)
}

/// Builds descriptors for every tree node from the eigenvector matrix
/// (N regions x d columns, min-max normalized per column here).
///
/// A leaf's block for dimension j is the one-hot bin of its normalized
/// value, weighted by pixel count; internal nodes sum their children's
/// unnormalized counts, then every block is renormalized.
pub fn node_histograms<F: Real>(
    tree: &SegTree<F>,
    vectors: &DMatrix<F>,
    l: usize,
) -> Result<Vec<EigenHistogram<F>>> {
    let n = tree.n_leaves();
    let d = vectors.ncols();
    if vectors.nrows() != n {
        return Err(Error::Dimension {
            expected: format!("{n} eigenvector rows"),
            got: format!("{}", vectors.nrows()),
        });
    }
    if l < 1 || d < 1 {
        return Err(Error::Contract("need l >= 1 and d >= 1".into()));
    }
    let columns: Vec<Vec<F>> = (0..d)
        .map(|c| normalize_eigenvector(&(0..n).map(|r| vectors[(r, c)]).collect::<Vec<F>>()))
        .collect();

    // Children precede parents in node order, so one forward pass suffices.
    let mut counts: Vec<Vec<F>> = vec![Vec::new(); tree.len()];
    for (i, node) in tree.nodes().iter().enumerate() {
        if let Some(region) = node.leaf_region {
            let mut c = vec![F::zero(); d * l];
            let pc = count::<F>(node.pixel_count);
            for (j, col) in columns.iter().enumerate() {
                c[j * l + histogram_bin(col[region as usize], l)] = pc;
            }
            counts[i] = c;
        } else {
            let (a, b) = node.children.expect("internal node has children");
            counts[i] = counts[a]
                .iter()
                .zip(&counts[b])
                .map(|(&x, &y)| x + y)
                .collect();
        }
    }

    Ok(counts
        .into_iter()
        .map(|mut c| {
            for block in c.chunks_mut(l) {
                let sum: F = block.iter().cloned().sum();
                for v in block {
                    *v /= sum;
                }
            }
            EigenHistogram { values: c, l }
        })
        .collect())
}

/// Hard assignment of each leaf region to one of `l` segments, with the
/// per-segment descriptor of the pooled member regions.
#[derive(Debug, Clone)]
pub struct PriorSegmentation<F> {
    pub assignment: Vec<u32>,
    pub segment_hists: Vec<EigenHistogram<F>>,
    pub l: usize,
}

/// Weighted k-means with plus-plus seeding. Returns the assignment and the
/// final objective (weighted sum of squared distances).
pub fn kmeans<F: Real>(
    points: &DMatrix<F>,
    weights: &[F],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<u32>, F)> {
    let n = points.nrows();
    let d = points.ncols();
    if k < 1 || k > n {
        return Err(Error::Contract(format!("need 1 <= k <= {n}, got {k}")));
    }
    if weights.len() != n {
        return Err(Error::Dimension {
            expected: format!("{n} weights"),
            got: format!("{}", weights.len()),
        });
    }
    let row = |i: usize| (0..d).map(|c| points[(i, c)]).collect::<Vec<F>>();
    let dist2 = |p: &[F], q: &[F]| -> F {
        p.iter()
            .zip(q)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Plus-plus seeding: first center by weight, then by weight times
    // squared distance to the nearest chosen center.
    let mut centers: Vec<Vec<F>> = Vec::with_capacity(k);
    let sample = |mass: &[F], rng: &mut ChaCha8Rng| -> Option<usize> {
        let total: F = mass.iter().cloned().sum();
        if !(total > F::zero()) {
            return None;
        }
        let r = flt::<F>(rng.random_range(0.0..1.0)) * total;
        let mut acc = F::zero();
        for (i, &m) in mass.iter().enumerate() {
            acc += m;
            if acc >= r && m > F::zero() {
                return Some(i);
            }
        }
        mass.iter().rposition(|&m| m > F::zero())
    };
    let first = sample(weights, &mut rng).ok_or_else(|| {
        Error::Contract("all k-means weights are zero".into())
    })?;
    centers.push(row(first));
    let mut nearest2: Vec<F> = (0..n).map(|i| dist2(&row(i), &centers[0])).collect();
    while centers.len() < k {
        let mass: Vec<F> = nearest2
            .iter()
            .zip(weights)
            .map(|(&d2, &w)| d2 * w)
            .collect();
        let pick = match sample(&mass, &mut rng) {
            Some(i) => i,
            // All residual mass zero: duplicate points; any unchosen index.
            None => (0..n)
                .find(|&i| centers.iter().all(|c| dist2(&row(i), c) > F::zero()))
                .unwrap_or(0),
        };
        centers.push(row(pick));
        for i in 0..n {
            let d2 = dist2(&row(i), centers.last().unwrap());
            if d2 < nearest2[i] {
                nearest2[i] = d2;
            }
        }
    }

    let mut assignment = vec![0u32; n];
    for _ in 0..max_iters {
        // Assignment step; ties go to the lower center index.
        let mut changed = false;
        for i in 0..n {
            let p = row(i);
            let mut best = (F::infinity(), 0u32);
            for (c, center) in centers.iter().enumerate() {
                let d2 = dist2(&p, center);
                if d2 < best.0 {
                    best = (d2, c as u32);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }

        // Re-seed any empty cluster from the farthest point overall.
        let mut counts = vec![F::zero(); k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a as usize] += weights[i];
        }
        for c in 0..k {
            if !(counts[c] > F::zero()) {
                let far = (0..n)
                    .max_by(|&x, &y| {
                        let dx = dist2(&row(x), &centers[assignment[x] as usize]);
                        let dy = dist2(&row(y), &centers[assignment[y] as usize]);
                        dx.partial_cmp(&dy).unwrap().then(y.cmp(&x))
                    })
                    .unwrap();
                centers[c] = row(far);
                assignment[far] = c as u32;
                counts[c] += weights[far];
                changed = true;
            }
        }

        // Update step: weighted means.
        for (c, center) in centers.iter_mut().enumerate() {
            let mut sum = vec![F::zero(); d];
            let mut mass = F::zero();
            for i in 0..n {
                if assignment[i] == c as u32 {
                    let w = weights[i];
                    mass += w;
                    for (s, &v) in sum.iter_mut().zip(&row(i)) {
                        *s += w * v;
                    }
                }
            }
            if mass > F::zero() {
                for s in &mut sum {
                    *s /= mass;
                }
                *center = sum;
            }
        }
        if !changed {
            break;
        }
    }

    let objective: F = (0..n)
        .map(|i| weights[i] * dist2(&row(i), &centers[assignment[i] as usize]))
        .sum();
    Ok((assignment, objective))
}

/// Groups leaf regions into `l` segments by k-means on the eigenvector rows
/// and pools their histogram counts into per-segment descriptors.
pub fn kmeans_prior<F: Real>(
    tree: &SegTree<F>,
    vectors: &DMatrix<F>,
    hists: &[EigenHistogram<F>],
    l: usize,
    seed: u64,
    weighted: bool,
    max_iters: usize,
) -> Result<PriorSegmentation<F>> {
    let n = tree.n_leaves();
    if l < 2 || l > n {
        return Err(Error::Contract(format!("need 2 <= l <= {n}, got {l}")));
    }
    if hists.len() != tree.len() {
        return Err(Error::Dimension {
            expected: format!("{} histograms", tree.len()),
            got: format!("{}", hists.len()),
        });
    }
    let weights: Vec<F> = if weighted {
        (0..n)
            .map(|i| count::<F>(tree.node(i).pixel_count))
            .collect()
    } else {
        vec![F::one(); n]
    };
    let (assignment, _) = kmeans(vectors, &weights, l, seed, max_iters)?;

    let d = hists[0].dims();
    let bins = l_bins(hists);
    let mut counts = vec![vec![F::zero(); d * bins]; l];
    for leaf in 0..n {
        let pc = count::<F>(tree.node(leaf).pixel_count);
        let seg = assignment[leaf] as usize;
        for (c, &h) in counts[seg].iter_mut().zip(hists[leaf].as_slice()) {
            // Leaf histograms are normalized; scaling by pixel count
            // recovers the raw bin counts.
            *c += h * pc;
        }
    }
    let segment_hists = counts
        .into_iter()
        .map(|mut c| {
            for block in c.chunks_mut(bins) {
                let sum: F = block.iter().cloned().sum();
                if sum > F::zero() {
                    for v in block {
                        *v /= sum;
                    }
                } else {
                    // Empty segment cannot occur after re-seeding, but keep
                    // the descriptor well-formed regardless.
                    let uniform = F::one() / count::<F>(bins);
                    for v in block {
                        *v = uniform;
                    }
                }
            }
            EigenHistogram { values: c, l: bins }
        })
        .collect();
    Ok(PriorSegmentation {
        assignment,
        segment_hists,
        l,
    })
}

fn l_bins<F: Real>(hists: &[EigenHistogram<F>]) -> usize {
    hists.first().map(|h| h.l()).unwrap_or(1)
}

/// Label-assignment cost: minus beta times the descriptor inner product.
pub fn unary<F: Real>(node: &EigenHistogram<F>, segment: &EigenHistogram<F>, beta: F) -> F {
    -beta * node.dot(segment)
}

/// Boundary cost between two adjacent leaf regions: border length times
/// exponentially discounted mean edge strength, so strong boundaries are
/// cheap to cut.
pub fn pairwise<F: Real>(
    stats: &BoundaryStats<F>,
    i: usize,
    j: usize,
    gamma_b: F,
) -> Result<F> {
    let (len, mean) = stats
        .get(i, j)
        .ok_or_else(|| Error::Contract(format!("regions {i} and {j} are not adjacent")))?;
    Ok(count::<F>(len) * Float::exp(-gamma_b * mean))
}

/// All adjacent leaf pairs with their boundary costs.
pub fn leaf_pairwise_costs<F: Real>(
    stats: &BoundaryStats<F>,
    gamma_b: F,
) -> Vec<(usize, usize, F)> {
    stats
        .iter()
        .map(|((i, j), (len, mean))| {
            (
                i as usize,
                j as usize,
                count::<F>(len) * Float::exp(-gamma_b * mean),
            )
        })
        .collect()
}

/// A covering of the tree: label 0 or 1..=l per node, at most one nonzero
/// label on every root-to-leaf path, every leaf covered.
#[derive(Debug, Clone)]
pub struct PylonLabeling<F> {
    pub labels: Vec<u32>,
    pub leaf_labels: Vec<u32>,
    pub energy: F,
}

impl<F: Real> PylonLabeling<F> {
    /// Structural check of the covering constraint.
    pub fn validate(&self, tree: &SegTree<F>) -> Result<()> {
        if self.labels.len() != tree.len() {
            return Err(Error::Invariant("label count != node count".into()));
        }
        for leaf in 0..tree.n_leaves() {
            let mut nonzero = 0;
            let mut at = leaf;
            loop {
                if self.labels[at] > 0 {
                    nonzero += 1;
                }
                match tree.node(at).parent {
                    Some(p) => at = p,
                    None => break,
                }
            }
            if nonzero != 1 {
                return Err(Error::Invariant(format!(
                    "leaf {leaf} has {nonzero} labeled ancestors"
                )));
            }
        }
        Ok(())
    }
}

/// Leaf labels and total energy of a covering.
fn labeling_energy<F: Real>(
    tree: &SegTree<F>,
    unaries: &[Vec<F>],
    pairs: &[(usize, usize, F)],
    labels: &[u32],
) -> (Vec<u32>, F) {
    let mut inherited = vec![0u32; tree.len()];
    let mut energy = F::zero();
    // Parents precede children in reverse node order.
    for i in (0..tree.len()).rev() {
        let own = labels[i];
        let above = tree.node(i).parent.map_or(0, |p| inherited[p]);
        inherited[i] = if own > 0 { own } else { above };
        if own > 0 {
            energy += unaries[i][own as usize - 1];
        }
    }
    let leaf_labels: Vec<u32> = (0..tree.n_leaves()).map(|i| inherited[i]).collect();
    for &(a, b, cost) in pairs {
        if leaf_labels[a] != leaf_labels[b] {
            energy += cost;
        }
    }
    (leaf_labels, energy)
}

/// Minimum-cost covering with all nodes restricted to one label `k`
/// (pairwise vanishes): dynamic program over the tree.
fn best_uniform_cover<F: Real>(tree: &SegTree<F>, unaries: &[Vec<F>], k: usize) -> Vec<u32> {
    let mut cost = vec![F::zero(); tree.len()];
    for i in 0..tree.len() {
        let u = unaries[i][k];
        cost[i] = match tree.node(i).children {
            None => u,
            Some((a, b)) => Float::min(u, cost[a] + cost[b]),
        };
    }
    let mut labels = vec![0u32; tree.len()];
    let mut stack = vec![tree.root()];
    while let Some(i) = stack.pop() {
        match tree.node(i).children {
            Some((a, b)) if cost[a] + cost[b] < unaries[i][k] => {
                stack.push(a);
                stack.push(b);
            }
            _ => labels[i] = k as u32 + 1,
        }
    }
    labels
}

/// Minimizes the covering energy by expansion moves.
///
/// Starting from the best single-label covering, each move jointly decides,
/// via one minimum cut, which subtrees switch to the expansion label and at
/// which ancestors the keepers re-cover. Moves are exact (the binary
/// energy is submodular), accepted only on strict improvement, and the
/// sweep repeats until no label improves.
pub fn pylon_infer<F: Real>(
    tree: &SegTree<F>,
    unaries: &[Vec<F>],
    pairs: &[(usize, usize, F)],
    l: usize,
) -> Result<PylonLabeling<F>> {
    let n_nodes = tree.len();
    let n_leaves = tree.n_leaves();
    if l < 1 {
        return Err(Error::Contract("need l >= 1".into()));
    }
    if unaries.len() != n_nodes || unaries.iter().any(|u| u.len() != l) {
        return Err(Error::Dimension {
            expected: format!("{n_nodes} x {l} unaries"),
            got: format!("{} x {}", unaries.len(), unaries.first().map_or(0, Vec::len)),
        });
    }
    if pairs.iter().any(|&(a, b, _)| a >= n_leaves || b >= n_leaves) {
        return Err(Error::Contract("pairwise term on a non-leaf".into()));
    }

    // Uniform-label initialization: cheapest single-label covering.
    let mut labels = best_uniform_cover(tree, unaries, 0);
    let (_, mut energy) = labeling_energy(tree, unaries, pairs, &labels);
    for k in 1..l {
        let cand = best_uniform_cover(tree, unaries, k);
        let (_, e) = labeling_energy(tree, unaries, pairs, &cand);
        if e < energy {
            labels = cand;
            energy = e;
        }
    }

    const MAX_ROUNDS: usize = 100;
    for round in 0..MAX_ROUNDS {
        let mut improved = false;
        for alpha in 1..=l as u32 {
            let (cand_labels, cand_energy) =
                expansion_move(tree, unaries, pairs, &labels, alpha)?;
            if cand_energy < energy {
                labels = cand_labels;
                energy = cand_energy;
                improved = true;
            }
        }
        if !improved {
            break;
        }
        if round + 1 == MAX_ROUNDS {
            log::warn!("expansion sweep hit the round cap without converging");
        }
    }

    let (leaf_labels, energy) = labeling_energy(tree, unaries, pairs, &labels);
    let out = PylonLabeling {
        labels,
        leaf_labels,
        energy,
    };
    out.validate(tree)?;
    Ok(out)
}

/// One expansion move: returns the best covering where each leaf either
/// keeps its current label or switches to `alpha`.
///
/// Binary variables: per node, u = "every leaf below takes alpha"
/// (down-closed; alpha-unaries paid at maximal u-nodes) and, per internal
/// node, w = "some leaf below takes alpha" (up-closed; keep-unaries paid at
/// maximal w=0 nodes, which freezing pins at or below the incumbent
/// covers). Leaves share one variable for both roles.
fn expansion_move<F: Real>(
    tree: &SegTree<F>,
    unaries: &[Vec<F>],
    pairs: &[(usize, usize, F)],
    labels: &[u32],
    alpha: u32,
) -> Result<(Vec<u32>, F)> {
    let n_nodes = tree.len();
    let n_leaves = tree.n_leaves();
    let a_idx = alpha as usize - 1;
    let inf = F::infinity();

    // Incumbent label covering each node (own or nearest labeled ancestor);
    // None strictly above the covers.
    let mut inc = vec![0u32; n_nodes];
    for i in (0..n_nodes).rev() {
        let above = tree.node(i).parent.map_or(0, |p| inc[p]);
        inc[i] = if labels[i] > 0 { labels[i] } else { above };
    }

    // Variable layout: nodes 0..n_nodes are u (leaves double as w);
    // internal node i gets w at n_nodes + (i - n_leaves).
    let wvar = |i: usize| {
        if i < n_leaves {
            i
        } else {
            n_nodes + (i - n_leaves)
        }
    };
    let mut en = BinaryEnergy::new(n_nodes + (n_nodes - n_leaves));

    for i in 0..n_nodes {
        if i >= n_leaves && inc[i] == 0 {
            // Unkeepable: above every incumbent cover, so "some leaf below
            // keeps" can never be certified with a single label there.
            en.add_unary(wvar(i), inf, F::zero());
        }
        match tree.node(i).parent {
            Some(p) => {
                // Down-closure of u; alpha-unary at maximal u-nodes.
                en.add_pairwise(i, p, F::zero(), inf, unaries[i][a_idx], F::zero())?;
                // Up-closure of w; keep-unary at maximal w=0 nodes.
                let keep_pay = if inc[i] > 0 {
                    unaries[i][inc[i] as usize - 1]
                } else {
                    F::zero()
                };
                en.add_pairwise(wvar(i), wvar(p), F::zero(), keep_pay, inf, F::zero())?;
            }
            None => {
                en.add_unary(i, F::zero(), unaries[i][a_idx]);
                if inc[i] > 0 {
                    en.add_unary(wvar(i), unaries[i][inc[i] as usize - 1], F::zero());
                }
            }
        }
    }

    // Potts terms between adjacent leaves, conditioned on their choices.
    for &(a, b, cost) in pairs {
        let ca = inc[a];
        let cb = inc[b];
        let t00 = if ca != cb { cost } else { F::zero() };
        let t01 = if ca != alpha { cost } else { F::zero() };
        let t10 = if cb != alpha { cost } else { F::zero() };
        en.add_pairwise(a, b, t00, t01, t10, F::zero())?;
    }

    let x = en.solve();

    let mut new_labels = vec![0u32; n_nodes];
    for i in 0..n_nodes {
        let u_i = x[i];
        let u_p = tree.node(i).parent.map_or(false, |p| x[p]);
        if u_i && !u_p {
            new_labels[i] = alpha;
        }
        if inc[i] > 0 {
            let w_i = x[wvar(i)];
            let w_p = tree.node(i).parent.map_or(true, |p| x[wvar(p)]);
            if !w_i && w_p {
                debug_assert_eq!(new_labels[i], 0, "alpha and keep covers collide");
                new_labels[i] = inc[i];
            }
        }
    }

    let (_, energy) = labeling_energy(tree, unaries, pairs, &new_labels);
    Ok((new_labels, energy))
}

/// Soft boundary strengths between 4-adjacent pixels: `horiz[(r, c)]` sits
/// between (r, c) and (r, c+1); `vert[(r, c)]` between (r, c) and (r+1, c).
#[derive(Debug, Clone)]
pub struct SoftBoundary<F> {
    pub horiz: Array2<F>,
    pub vert: Array2<F>,
}

impl<F: Real> SoftBoundary<F> {
    pub fn dims(&self) -> (usize, usize) {
        (self.horiz.nrows(), self.vert.ncols())
    }

    pub fn max_value(&self) -> F {
        self.horiz
            .iter()
            .chain(self.vert.iter())
            .cloned()
            .fold(F::zero(), |a, b| if b > a { b } else { a })
    }

    /// Sorted distinct boundary values: the natural threshold grid.
    pub fn thresholds(&self) -> Vec<F> {
        let mut vals: Vec<F> = self.horiz.iter().chain(self.vert.iter()).cloned().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        vals
    }

    /// Connected components after removing all boundaries of strength <= t,
    /// labeled compactly in row-major first-visit order.
    pub fn segmentation_at(&self, t: F) -> Array2<u32> {
        let (h, w) = self.dims();
        let mut uf = UnionFind::new(h * w);
        for r in 0..h {
            for c in 0..w.saturating_sub(1) {
                if self.horiz[(r, c)] <= t {
                    uf.union(r * w + c, r * w + c + 1);
                }
            }
        }
        for r in 0..h.saturating_sub(1) {
            for c in 0..w {
                if self.vert[(r, c)] <= t {
                    uf.union(r * w + c, (r + 1) * w + c);
                }
            }
        }
        let mut next = 0u32;
        let mut names = vec![u32::MAX; h * w];
        let mut out = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let rep = uf.find(r * w + c);
                if names[rep] == u32::MAX {
                    names[rep] = next;
                    next += 1;
                }
                out[(r, c)] = names[rep];
            }
        }
        out
    }

    /// Per-pixel rendering for export: the strongest boundary incident to
    /// each pixel.
    pub fn to_pixel_map(&self) -> Array2<F> {
        let (h, w) = self.dims();
        let mut out = Array2::zeros((h, w));
        let mut bump = |r: usize, c: usize, v: F| {
            if v > out[(r, c)] {
                out[(r, c)] = v;
            }
        };
        for r in 0..h {
            for c in 0..w - 1 {
                let v = self.horiz[(r, c)];
                bump(r, c, v);
                bump(r, c + 1, v);
            }
        }
        for r in 0..h - 1 {
            for c in 0..w {
                let v = self.vert[(r, c)];
                bump(r, c, v);
                bump(r + 1, c, v);
            }
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Runs the labeling once per beta, renders each leaf-label boundary
/// image, and averages them with the region-boundary image into a soft
/// map in [0, 1].
pub fn beta_sweep<F: Real>(
    tree: &SegTree<F>,
    hists: &[EigenHistogram<F>],
    prior: &PriorSegmentation<F>,
    betas: &[F],
    regions: &RegionMap<F>,
    stats: &BoundaryStats<F>,
    gamma_b: F,
) -> Result<(SoftBoundary<F>, Vec<PylonLabeling<F>>)> {
    if betas.is_empty() {
        return Err(Error::Contract("beta list is empty".into()));
    }
    let pairs = leaf_pairwise_costs(stats, gamma_b);
    let mut labelings = Vec::with_capacity(betas.len());
    for &beta in betas {
        let unaries: Vec<Vec<F>> = hists
            .iter()
            .map(|h| {
                (0..prior.l)
                    .map(|k| unary(h, &prior.segment_hists[k], beta))
                    .collect()
            })
            .collect();
        labelings.push(pylon_infer(tree, &unaries, &pairs, prior.l)?);
    }

    let (h, w) = regions.dims();
    let labels = regions.labels();
    let denom = count::<F>(betas.len() + 1);
    let pair_value = |ra: u32, rb: u32| -> F {
        if ra == rb {
            return F::zero();
        }
        let mut hits = F::one(); // region-boundary image
        for lab in &labelings {
            if lab.leaf_labels[ra as usize] != lab.leaf_labels[rb as usize] {
                hits += F::one();
            }
        }
        hits / denom
    };
    let mut horiz = Array2::zeros((h, w - 1));
    for r in 0..h {
        for c in 0..w - 1 {
            horiz[(r, c)] = pair_value(labels[(r, c)], labels[(r, c + 1)]);
        }
    }
    let mut vert = Array2::zeros((h - 1, w));
    for r in 0..h - 1 {
        for c in 0..w {
            vert[(r, c)] = pair_value(labels[(r, c)], labels[(r + 1, c)]);
        }
    }
    Ok((SoftBoundary { horiz, vert }, labelings))
}
