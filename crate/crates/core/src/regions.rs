//! Region structure: edge maps, superpixel over-segmentation, region
//! statistics, and the agglomerative segmentation tree.
//!
//! A [`RegionMap`] is a compact partition of the pixel grid into 4-connected
//! regions. It is produced either by the built-in watershed-style
//! [`superpixels`] pass over an edge map, or by [`ingest_external`] from
//! label files computed elsewhere. [`SegTree`] stacks a binary merge
//! hierarchy on top of the regions, ordering merges by mean boundary
//! strength.

use ndarray::Array2;
use num_traits::Float;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::formats;
use crate::imgproc::{self, ImagePlane, PixelFeatureStack};
use crate::scalar::{count, flt, Real};

/// Edge-strength map with values clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct EdgeMap<F> {
    grid: Array2<F>,
}

impl<F: Real> EdgeMap<F> {
    pub fn new(grid: Array2<F>) -> Self {
        let grid = grid.mapv(|v| Float::max(F::zero(), Float::min(F::one(), v)));
        EdgeMap { grid }
    }

    pub fn grid(&self) -> &Array2<F> {
        &self.grid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dim()
    }
}

/// Separable Gaussian blur with replicate padding.
fn gaussian_blur<F: Real>(plane: &Array2<F>, sigma: f64) -> Array2<F> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut total = 0.0;
    for k in -radius..=radius {
        let v = (-0.5 * (k as f64 / sigma).powi(2)).exp();
        kernel.push(v);
        total += v;
    }
    let kernel: Vec<F> = kernel.into_iter().map(|v| flt::<F>(v / total)).collect();
    let (h, w) = plane.dim();
    let mut horiz = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = F::zero();
            for (ki, &kv) in kernel.iter().enumerate() {
                let cc = (c as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += kv * plane[[r, cc]];
            }
            horiz[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = F::zero();
            for (ki, &kv) in kernel.iter().enumerate() {
                let rr = (r as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * horiz[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Fallback edge detector: smoothed multi-channel Lab gradient magnitude,
/// rescaled so the strongest response is 1.
///
/// Lab channels are first rescaled to [0, 1] so all three contribute on the
/// same footing, blurred with a sigma = 1 Gaussian, differentiated with
/// clamped central differences, and combined as the root of the summed
/// squared responses. A constant image yields an all-zero map.
pub fn compute_edges_fallback<F: Real>(img: &ImagePlane<F>) -> Result<EdgeMap<F>> {
    let lab = imgproc::rgb_to_lab(img)?;
    let (h, w) = (img.height(), img.width());
    let mut planes = Vec::with_capacity(3);
    for ch in 0..3 {
        let grid = Array2::from_shape_fn((h, w), |(r, c)| {
            let t = imgproc::rescale_lab([
                lab.channel(0)[[r, c]],
                lab.channel(1)[[r, c]],
                lab.channel(2)[[r, c]],
            ]);
            t[ch]
        });
        planes.push(gaussian_blur(&grid, 1.0));
    }
    let half = flt::<F>(0.5);
    let mut mag = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = F::zero();
            for plane in &planes {
                let cl = c.saturating_sub(1);
                let cr = (c + 1).min(w - 1);
                let ru = r.saturating_sub(1);
                let rd = (r + 1).min(h - 1);
                let gx = (plane[[r, cr]] - plane[[r, cl]]) * half;
                let gy = (plane[[rd, c]] - plane[[ru, c]]) * half;
                acc += gx * gx + gy * gy;
            }
            mag[[r, c]] = Float::sqrt(acc);
        }
    }
    let max = mag.iter().cloned().fold(F::zero(), Float::max);
    if max > F::zero() {
        mag.mapv_inplace(|v| v / max);
    }
    Ok(EdgeMap::new(mag))
}

/// Compact partition of the pixel grid into 4-connected regions.
///
/// Labels are dense in [0, n); every region is nonempty and 4-connected.
/// Centroids are (row, col) pixel-coordinate means.
#[derive(Debug, Clone)]
pub struct RegionMap<F> {
    labels: Array2<u32>,
    count: usize,
    sizes: Vec<usize>,
    centroids: Vec<[F; 2]>,
    adjacency: Vec<Vec<u32>>,
}

impl<F: Real> RegionMap<F> {
    /// Canonicalizes an arbitrary label grid into a valid region map.
    ///
    /// Labels are split into 4-connected components (a label whose pixels
    /// form several components becomes several regions) and re-identified
    /// densely in row-major first-visit order.
    pub fn from_labels(raw: &Array2<u32>) -> Result<Self> {
        let (h, w) = raw.dim();
        if h == 0 || w == 0 {
            return Err(Error::Ingest("label grid is empty".into()));
        }
        let mut labels = Array2::from_elem((h, w), u32::MAX);
        let mut count: u32 = 0;
        let mut split_sources: BTreeSet<u32> = BTreeSet::new();
        let mut seen_sources: BTreeSet<u32> = BTreeSet::new();
        let mut stack = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if labels[[r, c]] != u32::MAX {
                    continue;
                }
                let src = raw[[r, c]];
                if !seen_sources.insert(src) {
                    split_sources.insert(src);
                }
                let id = count;
                count = count.checked_add(1).ok_or_else(|| {
                    Error::Ingest("more than u32::MAX regions".into())
                })?;
                stack.push((r, c));
                labels[[r, c]] = id;
                while let Some((pr, pc)) = stack.pop() {
                    for (nr, nc) in neighbors4(pr, pc, h, w) {
                        if labels[[nr, nc]] == u32::MAX && raw[[nr, nc]] == src {
                            labels[[nr, nc]] = id;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
        }
        for src in &split_sources {
            log::warn!("label {src} is not 4-connected; split into separate regions");
        }
        Ok(Self::from_canonical(labels, count as usize))
    }

    /// Builds the derived fields for a grid already known to be canonical.
    fn from_canonical(labels: Array2<u32>, count: usize) -> Self {
        let (h, w) = labels.dim();
        let mut sizes = vec![0usize; count];
        let mut row_sum = vec![0f64; count];
        let mut col_sum = vec![0f64; count];
        let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); count];
        for r in 0..h {
            for c in 0..w {
                let id = labels[[r, c]] as usize;
                sizes[id] += 1;
                row_sum[id] += r as f64;
                col_sum[id] += c as f64;
                if c + 1 < w {
                    let other = labels[[r, c + 1]];
                    if other != id as u32 {
                        adj[id].insert(other);
                        adj[other as usize].insert(id as u32);
                    }
                }
                if r + 1 < h {
                    let other = labels[[r + 1, c]];
                    if other != id as u32 {
                        adj[id].insert(other);
                        adj[other as usize].insert(id as u32);
                    }
                }
            }
        }
        let centroids = (0..count)
            .map(|i| {
                [
                    flt::<F>(row_sum[i] / sizes[i] as f64),
                    flt::<F>(col_sum[i] / sizes[i] as f64),
                ]
            })
            .collect();
        RegionMap {
            labels,
            count,
            sizes,
            centroids,
            adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Centroid as (row, col) means.
    pub fn centroid(&self, i: usize) -> [F; 2] {
        self.centroids[i]
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adjacency[i]
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&(j as u32)).is_ok()
    }

    /// Euclidean centroid distance between two regions.
    pub fn centroid_distance(&self, i: usize, j: usize) -> F {
        let a = self.centroids[i];
        let b = self.centroids[j];
        let dr = a[0] - b[0];
        let dc = a[1] - b[1];
        Float::sqrt(dr * dr + dc * dc)
    }

    /// Checks the structural invariants; used by tests.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.labels.dim();
        let mut seen = vec![false; self.count];
        for v in self.labels.iter() {
            let id = *v as usize;
            if id >= self.count {
                return Err(Error::Invariant(format!("label {id} out of range")));
            }
            seen[id] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Invariant("empty region id".into()));
        }
        // Connectivity: flood from each region's first pixel must cover it.
        let mut first = vec![None; self.count];
        for r in 0..h {
            for c in 0..w {
                let id = self.labels[[r, c]] as usize;
                if first[id].is_none() {
                    first[id] = Some((r, c));
                }
            }
        }
        for id in 0..self.count {
            let mut visited = 0usize;
            let mut mark = Array2::from_elem((h, w), false);
            let mut stack = vec![first[id].unwrap()];
            mark[[first[id].unwrap().0, first[id].unwrap().1]] = true;
            while let Some((r, c)) = stack.pop() {
                visited += 1;
                for (nr, nc) in neighbors4(r, c, h, w) {
                    if !mark[[nr, nc]] && self.labels[[nr, nc]] as usize == id {
                        mark[[nr, nc]] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            if visited != self.sizes[id] {
                return Err(Error::Invariant(format!("region {id} is not 4-connected")));
            }
        }
        Ok(())
    }
}

fn neighbors4(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(0usize, 0usize); 4];
    let mut n = 0;
    if r > 0 {
        out[n] = (r - 1, c);
        n += 1;
    }
    if r + 1 < h {
        out[n] = (r + 1, c);
        n += 1;
    }
    if c > 0 {
        out[n] = (r, c - 1);
        n += 1;
    }
    if c + 1 < w {
        out[n] = (r, c + 1);
        n += 1;
    }
    out.into_iter().take(n)
}

/// Per-adjacent-pair boundary statistics: shared border length (count of
/// 4-adjacent pixel pairs across the border) and mean edge strength along
/// it, where each pixel pair contributes the mean of its two edge values.
#[derive(Debug, Clone)]
pub struct BoundaryStats<F> {
    map: BTreeMap<(u32, u32), (usize, F)>,
}

impl<F: Real> BoundaryStats<F> {
    pub fn compute(regions: &RegionMap<F>, edges: &EdgeMap<F>) -> Result<Self> {
        if regions.dims() != edges.dims() {
            return Err(Error::Dimension {
                expected: format!("{:?}", regions.dims()),
                got: format!("{:?}", edges.dims()),
            });
        }
        let (h, w) = regions.dims();
        let labels = regions.labels();
        let grid = edges.grid();
        let half = flt::<F>(0.5);
        let mut map: BTreeMap<(u32, u32), (usize, F)> = BTreeMap::new();
        let mut visit = |a: u32, b: u32, s: F| {
            let key = if a < b { (a, b) } else { (b, a) };
            let e = map.entry(key).or_insert((0, F::zero()));
            e.0 += 1;
            e.1 += s;
        };
        for r in 0..h {
            for c in 0..w {
                let id = labels[[r, c]];
                if c + 1 < w && labels[[r, c + 1]] != id {
                    visit(id, labels[[r, c + 1]], (grid[[r, c]] + grid[[r, c + 1]]) * half);
                }
                if r + 1 < h && labels[[r + 1, c]] != id {
                    visit(id, labels[[r + 1, c]], (grid[[r, c]] + grid[[r + 1, c]]) * half);
                }
            }
        }
        Ok(BoundaryStats { map })
    }

    /// (border length, mean strength) for an adjacent pair, any order.
    pub fn get(&self, i: usize, j: usize) -> Option<(usize, F)> {
        let key = if i < j {
            (i as u32, j as u32)
        } else {
            (j as u32, i as u32)
        };
        self.map
            .get(&key)
            .map(|&(n, sum)| (n, sum / count::<F>(n)))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), (usize, F))> + '_ {
        self.map
            .iter()
            .map(|(&k, &(n, sum))| (k, (n, sum / count::<F>(n))))
    }
}

/// Watershed-style superpixel over-segmentation of an edge map.
///
/// Seeds are laid out on a near-square grid of `r x c >= target_n` cells
/// (the smallest such grid, so the region count stays within about 15% of
/// `target_n`), snapped to the weakest edge pixel near each cell center,
/// and grown by minimax priority flooding: a pixel joins the seed whose
/// path to it crosses the lowest maximal edge strength, with deterministic
/// FIFO tie-breaking. Falls back to a plain grid partition when no suitable
/// seed grid exists.
pub fn superpixels<F: Real>(edges: &EdgeMap<F>, target_n: usize) -> Result<RegionMap<F>> {
    let (h, w) = edges.dims();
    let pixels = h * w;
    if target_n < 2 || target_n > pixels {
        return Err(Error::Contract(format!(
            "target_n must be in [2, {pixels}], got {target_n}"
        )));
    }
    let grid_shape = choose_seed_grid(h, w, target_n);
    let (rows, cols) = match grid_shape {
        Some(rc) => rc,
        None => return grid_partition(h, w, target_n),
    };

    let row_bounds = band_bounds(h, rows);
    let col_bounds = band_bounds(w, cols);
    let grid = edges.grid();
    let mut seeds = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let (r0, r1) = row_bounds[br];
            let (c0, c1) = col_bounds[bc];
            let cr = (r0 + r1 - 1) / 2;
            let cc = (c0 + c1 - 1) / 2;
            // Snap to the weakest edge pixel in the 3x3 around the center,
            // clipped to the cell so seeds stay distinct.
            let mut best = (cr, cc);
            let mut best_v = grid[[cr, cc]];
            for rr in cr.saturating_sub(1)..=(cr + 1).min(r1 - 1) {
                for cc2 in cc.saturating_sub(1)..=(cc + 1).min(c1 - 1) {
                    if rr < r0 || cc2 < c0 {
                        continue;
                    }
                    if grid[[rr, cc2]] < best_v {
                        best_v = grid[[rr, cc2]];
                        best = (rr, cc2);
                    }
                }
            }
            seeds.push(best);
        }
    }

    let labels = minimax_flood(grid, &seeds);
    RegionMap::from_labels(&labels)
}

/// Smallest r x c grid with r*c in [target, ~1.15*target]; ties prefer cells
/// closest to square.
fn choose_seed_grid(h: usize, w: usize, target: usize) -> Option<(usize, usize)> {
    let slack = (target + target * 15 / 100).max(target + 1);
    let mut best: Option<(usize, usize, usize, i64)> = None; // (rc, r, c, aspect)
    for r in 1..=h.min(target) {
        let c = target.div_ceil(r);
        if c > w {
            continue;
        }
        let rc = r * c;
        if rc > slack {
            continue;
        }
        // Cell squareness: want h/r close to w/c, i.e. |h*c - w*r| small.
        let aspect = (h as i64 * c as i64 - w as i64 * r as i64).abs();
        let cand = (rc, r, c, aspect);
        best = match best {
            None => Some(cand),
            Some(b) if (cand.0, cand.3, cand.1) < (b.0, b.3, b.1) => Some(cand),
            Some(b) => Some(b),
        };
    }
    best.map(|(_, r, c, _)| (r, c))
}

fn band_bounds(extent: usize, bands: usize) -> Vec<(usize, usize)> {
    let base = extent / bands;
    let extra = extent % bands;
    let mut out = Vec::with_capacity(bands);
    let mut start = 0;
    for b in 0..bands {
        let len = base + usize::from(b < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Degenerate fallback: direct grid partition into exactly `target` cells.
fn grid_partition<F: Real>(h: usize, w: usize, target: usize) -> Result<RegionMap<F>> {
    let rows = ((target as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(target));
    let cols = target.div_ceil(rows).min(w);
    let row_bounds = band_bounds(h, rows);
    let col_bounds = band_bounds(w, cols);
    let mut labels = Array2::zeros((h, w));
    for (br, &(r0, r1)) in row_bounds.iter().enumerate() {
        for (bc, &(c0, c1)) in col_bounds.iter().enumerate() {
            // Cells beyond the target fold into the last kept cell.
            let id = (br * cols + bc).min(target - 1) as u32;
            for r in r0..r1 {
                for c in c0..c1 {
                    labels[[r, c]] = id;
                }
            }
        }
    }
    RegionMap::from_labels(&labels)
}

#[derive(PartialEq)]
struct FloodEntry {
    priority: f64,
    order: u64,
    pixel: (usize, usize),
    region: u32,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(self.order.cmp(&other.order))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn minimax_flood<F: Real>(grid: &Array2<F>, seeds: &[(usize, usize)]) -> Array2<u32> {
    let (h, w) = grid.dim();
    let mut labels = Array2::from_elem((h, w), u32::MAX);
    let mut heap: BinaryHeap<Reverse<FloodEntry>> = BinaryHeap::new();
    let mut order = 0u64;
    for (i, &(r, c)) in seeds.iter().enumerate() {
        labels[[r, c]] = i as u32;
    }
    for (i, &(r, c)) in seeds.iter().enumerate() {
        let base = grid[[r, c]].to_f64().unwrap_or(0.0);
        for (nr, nc) in neighbors4(r, c, h, w) {
            if labels[[nr, nc]] == u32::MAX {
                let p = base.max(grid[[nr, nc]].to_f64().unwrap_or(0.0));
                heap.push(Reverse(FloodEntry {
                    priority: p,
                    order,
                    pixel: (nr, nc),
                    region: i as u32,
                }));
                order += 1;
            }
        }
    }
    while let Some(Reverse(e)) = heap.pop() {
        let (r, c) = e.pixel;
        if labels[[r, c]] != u32::MAX {
            continue;
        }
        labels[[r, c]] = e.region;
        for (nr, nc) in neighbors4(r, c, h, w) {
            if labels[[nr, nc]] == u32::MAX {
                let p = e.priority.max(grid[[nr, nc]].to_f64().unwrap_or(0.0));
                heap.push(Reverse(FloodEntry {
                    priority: p,
                    order,
                    pixel: (nr, nc),
                    region: e.region,
                }));
                order += 1;
            }
        }
    }
    labels
}

/// Loads externally computed label and edge maps, validating agreement and
/// canonicalizing the labels.
pub fn ingest_external<F: Real>(
    labels_path: &Path,
    edges_path: &Path,
) -> Result<(RegionMap<F>, EdgeMap<F>)> {
    let raw = formats::read_label_grid(labels_path)?;
    let edge_grid: Array2<F> = formats::read_float_grid(edges_path)?;
    if raw.dim() != edge_grid.dim() {
        return Err(Error::Dimension {
            expected: format!("labels {:?}", raw.dim()),
            got: format!("edges {:?}", edge_grid.dim()),
        });
    }
    let regions = RegionMap::from_labels(&raw)?;
    Ok((regions, EdgeMap::new(edge_grid)))
}

/// One node of the binary segmentation tree.
#[derive(Debug, Clone)]
pub struct TreeNode<F> {
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
    /// Edge strength at which this cluster formed; 0 for leaves.
    pub merge_level: F,
    pub pixel_count: usize,
    /// Region id for leaves, `None` for internal nodes.
    pub leaf_region: Option<u32>,
}

/// Binary agglomerative segmentation tree over the regions of a
/// [`RegionMap`]. Nodes 0..n are the leaves (leaf i is region i); internal
/// nodes follow in merge order, so the last node is the root and there are
/// exactly 2n - 1 nodes.
#[derive(Debug, Clone)]
pub struct SegTree<F> {
    nodes: Vec<TreeNode<F>>,
    n_leaves: usize,
}

impl<F: Real> SegTree<F> {
    /// Builds the tree by repeatedly merging the adjacent cluster pair with
    /// the lowest mean boundary strength (ties: lexicographically smallest
    /// node-id pair). Merge levels are made monotone by a running maximum.
    pub fn build(regions: &RegionMap<F>, edges: &EdgeMap<F>) -> Result<SegTree<F>> {
        let n = regions.len();
        if n < 2 {
            return Err(Error::Contract(
                "segmentation tree needs at least 2 regions".into(),
            ));
        }
        let stats = BoundaryStats::compute(regions, edges)?;

        let total_nodes = 2 * n - 1;
        let mut nodes: Vec<TreeNode<F>> = (0..n)
            .map(|i| TreeNode {
                parent: None,
                children: None,
                merge_level: F::zero(),
                pixel_count: regions.size(i),
                leaf_region: Some(i as u32),
            })
            .collect();

        // Active-cluster adjacency with accumulated border (length, strength sum),
        // keyed by tree-node ids.
        let mut pair: BTreeMap<(usize, usize), (usize, F)> = BTreeMap::new();
        let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); total_nodes];
        for ((a, b), (len, mean)) in stats.iter() {
            let (a, b) = (a as usize, b as usize);
            pair.insert((a, b), (len, mean * count::<F>(len)));
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }

        #[derive(PartialEq)]
        struct Cand {
            mean: f64,
            a: usize,
            b: usize,
        }
        impl Eq for Cand {}
        impl Ord for Cand {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.mean
                    .total_cmp(&o.mean)
                    .then(self.a.cmp(&o.a))
                    .then(self.b.cmp(&o.b))
            }
        }
        impl PartialOrd for Cand {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }

        let mut heap: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for (&(a, b), &(len, sum)) in &pair {
            heap.push(Reverse(Cand {
                mean: (sum / count::<F>(len)).to_f64().unwrap_or(f64::INFINITY),
                a,
                b,
            }));
        }

        let mut active = vec![true; total_nodes];
        let mut running_max = F::zero();
        while nodes.len() < total_nodes {
            let Reverse(cand) = heap.pop().ok_or_else(|| {
                Error::Invariant("region adjacency exhausted before tree completed".into())
            })?;
            let (a, b) = (cand.a, cand.b);
            if !active[a] || !active[b] {
                continue;
            }
            let Some(&(len, sum)) = pair.get(&(a, b)) else {
                continue;
            };
            let mean = sum / count::<F>(len);
            // Stale entry: the pair's stats changed since this was pushed.
            if (mean.to_f64().unwrap_or(f64::INFINITY) - cand.mean).abs() > 0.0 {
                heap.push(Reverse(Cand {
                    mean: mean.to_f64().unwrap_or(f64::INFINITY),
                    a,
                    b,
                }));
                continue;
            }

            let new_id = nodes.len();
            running_max = Float::max(running_max, mean);
            nodes.push(TreeNode {
                parent: None,
                children: Some((a, b)),
                merge_level: running_max,
                pixel_count: nodes[a].pixel_count + nodes[b].pixel_count,
                leaf_region: None,
            });
            nodes[a].parent = Some(new_id);
            nodes[b].parent = Some(new_id);
            active[a] = false;
            active[b] = false;

            // Rewire neighbors of a and b onto the merged cluster.
            let merged_nbrs: BTreeSet<usize> = nbrs[a]
                .iter()
                .chain(nbrs[b].iter())
                .copied()
                .filter(|&x| x != a && x != b)
                .collect();
            for &x in &merged_nbrs {
                let mut len_acc = 0usize;
                let mut sum_acc = F::zero();
                for &old in &[a, b] {
                    let key = if old < x { (old, x) } else { (x, old) };
                    if let Some((l, s)) = pair.remove(&key) {
                        len_acc += l;
                        sum_acc += s;
                    }
                }
                nbrs[x].remove(&a);
                nbrs[x].remove(&b);
                nbrs[x].insert(new_id);
                pair.insert((x, new_id), (len_acc, sum_acc));
                heap.push(Reverse(Cand {
                    mean: (sum_acc / count::<F>(len_acc))
                        .to_f64()
                        .unwrap_or(f64::INFINITY),
                    a: x,
                    b: new_id,
                }));
            }
            pair.remove(&(a, b));
            nbrs[new_id] = merged_nbrs;
            nbrs[a].clear();
            nbrs[b].clear();
        }

        let tree = SegTree { nodes, n_leaves: n };
        tree.validate()?;
        Ok(tree)
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, i: usize) -> &TreeNode<F> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[TreeNode<F>] {
        &self.nodes
    }

    /// Leaf node ids under `node` (equal to region ids).
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.nodes[v].children {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(v),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_leaves;
        if self.nodes.len() != 2 * n - 1 {
            return Err(Error::Invariant(format!(
                "tree has {} nodes for {} leaves",
                self.nodes.len(),
                n
            )));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some((l, r)) = node.children {
                if self.nodes[l].pixel_count + self.nodes[r].pixel_count != node.pixel_count {
                    return Err(Error::Invariant(format!(
                        "node {i} pixel count is not the sum of its children"
                    )));
                }
                if self.nodes[l].parent != Some(i) || self.nodes[r].parent != Some(i) {
                    return Err(Error::Invariant(format!("node {i} has mislinked children")));
                }
                if node.merge_level < self.nodes[l].merge_level
                    || node.merge_level < self.nodes[r].merge_level
                {
                    return Err(Error::Invariant(format!(
                        "node {i} merge level below a child's"
                    )));
                }
            } else if node.leaf_region != Some(i as u32) || i >= n {
                return Err(Error::Invariant(format!("leaf {i} mislabeled")));
            }
        }
        if self.nodes[self.root()].parent.is_some() {
            return Err(Error::Invariant("root has a parent".into()));
        }
        Ok(())
    }
}

/// Mean feature descriptors per region.
#[derive(Debug, Clone)]
pub struct RegionFeatures<F> {
    /// Lab mean per region, native ranges.
    pub lab_mean: Vec<[F; 3]>,
    /// Mean RGB covariance diagonal per region; entries in [0, 0.25].
    pub cov_mean: Vec<[F; 3]>,
    /// Mean saliency vector per region, flattened with stride `saliency_dim`.
    pub saliency: Vec<F>,
    pub saliency_dim: usize,
    /// Mean Rec. 601 luma per region.
    pub gray: Vec<F>,
}

impl<F: Real> RegionFeatures<F> {
    pub fn len(&self) -> usize {
        self.gray.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gray.is_empty()
    }

    pub fn saliency_of(&self, i: usize) -> &[F] {
        &self.saliency[i * self.saliency_dim..(i + 1) * self.saliency_dim]
    }

    /// The six [0, 1] channel values used by the co-occurrence model:
    /// rescaled Lab mean followed by the covariance diagonal scaled by 4
    /// (population variance of unit-range values caps at 1/4).
    pub fn co_channels(&self, i: usize) -> [F; 6] {
        let lab = imgproc::rescale_lab(self.lab_mean[i]);
        let four = flt::<F>(4.0);
        let clamp01 = |v: F| Float::max(F::zero(), Float::min(F::one(), v));
        [
            lab[0],
            lab[1],
            lab[2],
            clamp01(self.cov_mean[i][0] * four),
            clamp01(self.cov_mean[i][1] * four),
            clamp01(self.cov_mean[i][2] * four),
        ]
    }
}

/// Averages the per-pixel feature stack over each region.
pub fn region_features<F: Real>(
    img: &ImagePlane<F>,
    stack: &PixelFeatureStack<F>,
    regions: &RegionMap<F>,
) -> Result<RegionFeatures<F>> {
    if (stack.height(), stack.width()) != regions.dims() {
        return Err(Error::Dimension {
            expected: format!("{:?}", regions.dims()),
            got: format!("{:?}", (stack.height(), stack.width())),
        });
    }
    let gray_plane = imgproc::luma(img)?;
    let n = regions.len();
    let dim = stack.saliency_dim();
    let mut lab_mean = vec![[F::zero(); 3]; n];
    let mut cov_mean = vec![[F::zero(); 3]; n];
    let mut saliency = vec![F::zero(); n * dim];
    let mut gray = vec![F::zero(); n];
    let (h, w) = regions.dims();
    for r in 0..h {
        for c in 0..w {
            let id = regions.labels()[[r, c]] as usize;
            let lab = stack.lab(r, c);
            let cov = stack.cov_diag(r, c);
            for ch in 0..3 {
                lab_mean[id][ch] += lab[ch];
                cov_mean[id][ch] += cov[ch];
            }
            let s = stack.saliency(r, c);
            for (k, &v) in s.iter().enumerate() {
                saliency[id * dim + k] += v;
            }
            gray[id] += gray_plane[[r, c]];
        }
    }
    for id in 0..n {
        let inv = F::one() / count::<F>(regions.size(id));
        for ch in 0..3 {
            lab_mean[id][ch] *= inv;
            cov_mean[id][ch] *= inv;
        }
        for k in 0..dim {
            saliency[id * dim + k] *= inv;
        }
        gray[id] *= inv;
    }
    Ok(RegionFeatures {
        lab_mean,
        cov_mean,
        saliency,
        saliency_dim: dim,
        gray,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::ImagePlane;

    fn two_tone(h: usize, w: usize) -> ImagePlane<f64> {
        ImagePlane::from_rgb_fn(h, w, |_, c| {
            if c < w / 2 {
                [0.0, 0.0, 0.0]
            } else {
                [1.0, 1.0, 1.0]
            }
        })
    }

    #[test]
    fn edges_of_constant_image_are_zero() {
        let img = ImagePlane::from_rgb_fn(20, 30, |_, _| [0.4, 0.5, 0.6]);
        let e = compute_edges_fallback(&img).unwrap();
        assert!(e.grid().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edges_of_step_peak_on_step_columns() {
        let img = two_tone(40, 100);
        let e = compute_edges_fallback(&img).unwrap();
        let g = e.grid();
        let row = 20;
        let peak_col = (0..100)
            .max_by(|&a, &b| g[[row, a]].partial_cmp(&g[[row, b]]).unwrap())
            .unwrap();
        assert!(
            (49..=50).contains(&peak_col),
            "peak at column {peak_col}, want 49 or 50"
        );
        assert_eq!(g[[row, peak_col]], 1.0);
        for c in 0..100 {
            if (c as i64 - 49).abs() > 6 {
                assert!(
                    g[[row, c]] < 0.05,
                    "column {c} has response {}",
                    g[[row, c]]
                );
            }
        }
    }

    #[test]
    fn edges_respond_along_a_diagonal() {
        let img = ImagePlane::from_rgb_fn(32, 32, |r, c| {
            if r + c < 32 {
                [0.1, 0.1, 0.1]
            } else {
                [0.9, 0.9, 0.9]
            }
        });
        let e = compute_edges_fallback(&img).unwrap();
        let g = e.grid();
        assert!(g[[16, 15]] > 0.5);
        assert!(g[[5, 5]] < 0.05);
        assert!(g[[28, 28]] < 0.05);
    }

    #[test]
    fn region_map_canonicalizes_and_splits_disconnected_labels() {
        // Label 7 appears as two separate blobs; they must become two regions.
        let mut raw = Array2::zeros((4, 6));
        for r in 0..4 {
            for c in 0..6 {
                raw[[r, c]] = if c < 2 {
                    7u32
                } else if c < 4 {
                    3
                } else {
                    7
                };
            }
        }
        let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
        assert_eq!(rm.len(), 3);
        rm.validate().unwrap();
        assert_ne!(rm.labels()[[0, 0]], rm.labels()[[0, 5]]);
        assert_eq!(rm.size(0), 8);
        // First-visit order: left blob 0, middle 1, right 2.
        assert_eq!(rm.labels()[[0, 0]], 0);
        assert_eq!(rm.labels()[[0, 2]], 1);
        assert_eq!(rm.labels()[[0, 4]], 2);
        assert_eq!(rm.neighbors(1), &[0, 2]);
        assert!(!rm.are_adjacent(0, 2));
    }

    #[test]
    fn centroids_are_pixel_means() {
        let mut raw = Array2::zeros((2, 4));
        for c in 2..4 {
            raw[[0, c]] = 1u32;
            raw[[1, c]] = 1u32;
        }
        let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
        assert_eq!(rm.centroid(0), [0.5, 0.5]);
        assert_eq!(rm.centroid(1), [0.5, 2.5]);
        assert_eq!(rm.centroid_distance(0, 1), 2.0);
    }

    #[test]
    fn superpixels_on_constant_image_give_near_equal_quadrants() {
        let img = ImagePlane::from_rgb_fn(100, 100, |_, _| [0.5, 0.5, 0.5]);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 4).unwrap();
        assert_eq!(rm.len(), 4);
        rm.validate().unwrap();
        for i in 0..4 {
            let dev = (rm.size(i) as f64 - 2500.0).abs() / 2500.0;
            assert!(dev <= 0.2, "region {i} size {} off by {dev}", rm.size(i));
        }
    }

    #[test]
    fn superpixels_recover_two_tone_halves() {
        let img = two_tone(60, 100);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 2).unwrap();
        assert_eq!(rm.len(), 2);
        // Each region must coincide exactly with one tone.
        let labels = rm.labels();
        let left = labels[[0, 0]];
        let right = labels[[0, 99]];
        assert_ne!(left, right);
        for r in 0..60 {
            for c in 0..100 {
                let want = if c < 50 { left } else { right };
                assert_eq!(labels[[r, c]], want, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn superpixels_saturate_at_one_region_per_pixel() {
        let img = ImagePlane::from_rgb_fn(6, 5, |_, _| [0.2, 0.2, 0.2]);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 30).unwrap();
        assert_eq!(rm.len(), 30);
        assert!(rm.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn superpixels_reject_bad_target() {
        let img = ImagePlane::from_rgb_fn(4, 4, |_, _| [0.0, 0.0, 0.0]);
        let e = compute_edges_fallback(&img).unwrap();
        assert!(superpixels(&e, 1).is_err());
        assert!(superpixels(&e, 17).is_err());
    }

    #[test]
    fn superpixel_count_stays_near_target() {
        let img = ImagePlane::from_rgb_fn(57, 83, |r, c| {
            [((r * 7 + c * 3) % 11) as f64 / 10.0, 0.3, 0.6]
        });
        let e = compute_edges_fallback(&img).unwrap();
        for target in [7, 23, 50, 101] {
            let rm = superpixels(&e, target).unwrap();
            let n = rm.len() as f64;
            assert!(
                n >= target as f64 && n <= 1.2 * target as f64 + 1.0,
                "target {target} produced {n}"
            );
            rm.validate().unwrap();
        }
    }

    fn edge_from(grid: Array2<f64>) -> EdgeMap<f64> {
        EdgeMap::new(grid)
    }

    /// 1x4 image with 4 single-pixel regions and hand-set edge values.
    fn line_regions() -> RegionMap<f64> {
        let raw = Array2::from_shape_vec((1, 4), vec![0u32, 1, 2, 3]).unwrap();
        RegionMap::from_labels(&raw).unwrap()
    }

    #[test]
    fn boundary_stats_mean_and_length() {
        let rm = line_regions();
        let e = edge_from(Array2::from_shape_vec((1, 4), vec![0.0, 0.2, 0.6, 1.0]).unwrap());
        let stats = BoundaryStats::compute(&rm, &e).unwrap();
        let (len, mean) = stats.get(0, 1).unwrap();
        assert_eq!(len, 1);
        assert!((mean - 0.1).abs() < 1e-12);
        assert!(stats.get(0, 2).is_none());
    }

    #[test]
    fn tree_merges_in_strength_order_with_running_max() {
        // Borders: (0,1)=0.5, (1,2)=0.9, (2,3)=0.2 -> merge (2,3) at 0.2,
        // then (0,1) at 0.5, then the rest; running max keeps levels
        // nondecreasing even though the final mean may dip.
        let rm = line_regions();
        let e = edge_from(Array2::from_shape_vec((1, 4), vec![0.5, 0.5, 1.3, -0.9]).unwrap());
        // Pixel edge values clamp to [0,1]: [0.5,0.5,1,0] -> borders:
        // (0,1)=0.5, (1,2)=0.75, (2,3)=0.5. Tie between (0,1) and (2,3)
        // resolves to the lower id pair first.
        let tree = SegTree::build(&rm, &e).unwrap();
        assert_eq!(tree.len(), 7);
        // First merge is (0,1) (tie broken by id), second (2,3).
        assert_eq!(tree.node(4).children, Some((0, 1)));
        assert_eq!(tree.node(5).children, Some((2, 3)));
        assert_eq!(tree.node(4).merge_level, 0.5);
        assert_eq!(tree.node(5).merge_level, 0.5);
        // Final merge joins nodes 4 and 5 across the (1,2) border at 0.75.
        assert_eq!(tree.node(6).children, Some((4, 5)));
        assert_eq!(tree.node(6).merge_level, 0.75);
        tree.validate().unwrap();
    }

    #[test]
    fn tree_running_max_carries_forward() {
        // Strengths force an early strong merge followed by weaker ones.
        let raw = Array2::from_shape_vec((1, 3), vec![0u32, 1, 2]).unwrap();
        let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
        // Borders: (0,1)=0.9, (1,2)=0.1 -> merge (1,2)@0.1 then (0,merged)@0.9.
        let e = edge_from(Array2::from_shape_vec((1, 3), vec![0.9, 0.9, -0.7]).unwrap());
        let tree = SegTree::build(&rm, &e).unwrap();
        assert_eq!(tree.node(3).children, Some((1, 2)));
        assert!(tree.node(4).merge_level >= tree.node(3).merge_level);
        tree.validate().unwrap();
    }

    #[test]
    fn tree_rejects_single_region() {
        let raw = Array2::zeros((2, 2));
        let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
        let e = edge_from(Array2::zeros((2, 2)));
        assert!(SegTree::build(&rm, &e).is_err());
    }

    #[test]
    fn leaves_under_root_cover_all_regions() {
        let img = two_tone(20, 20);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 6).unwrap();
        let tree = SegTree::build(&rm, &e).unwrap();
        let mut leaves = tree.leaves_under(tree.root());
        leaves.sort_unstable();
        assert_eq!(leaves, (0..rm.len()).collect::<Vec<_>>());
        assert_eq!(
            tree.node(tree.root()).pixel_count,
            rm.sizes().iter().sum::<usize>()
        );
    }

    #[test]
    fn ingest_roundtrip_with_relabeling() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        let ep = dir.path().join("edges.csv");
        // Labels 5 and 9, non-compact; 9 is split into two components.
        std::fs::write(&lp, "9,5,9\n9,5,9\n").unwrap();
        std::fs::write(&ep, "0.1,0.9,0.2\n0.0,1.5,-0.3\n").unwrap();
        let (rm, em): (RegionMap<f64>, EdgeMap<f64>) = ingest_external(&lp, &ep).unwrap();
        assert_eq!(rm.len(), 3);
        rm.validate().unwrap();
        // Edge values clamp to [0,1].
        assert_eq!(em.grid()[[1, 1]], 1.0);
        assert_eq!(em.grid()[[1, 2]], 0.0);
    }

    #[test]
    fn ingest_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("labels.csv");
        let ep = dir.path().join("edges.csv");
        std::fs::write(&lp, "0,1\n").unwrap();
        std::fs::write(&ep, "0.1\n0.2\n").unwrap();
        match ingest_external::<f64>(&lp, &ep) {
            Err(Error::Dimension { .. }) => {}
            other => panic!("expected Dimension error, got {other:?}"),
        }
    }

    #[test]
    fn region_features_average_constant_image() {
        let img = ImagePlane::from_rgb_fn(10, 10, |_, _| [0.2, 0.4, 0.6]);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 4).unwrap();
        let stack = imgproc::pixel_features(&img, &[0.5, 1.5, 2.0]).unwrap();
        let rf = region_features(&img, &stack, &rm).unwrap();
        let expect_lab = imgproc::rgb_pixel_to_lab([0.2, 0.4, 0.6]);
        for i in 0..rm.len() {
            for ch in 0..3 {
                assert!((rf.lab_mean[i][ch] - expect_lab[ch]).abs() < 1e-9);
                // E[x^2] - E[x]^2 on constant input leaves rounding residue.
                assert!(rf.cov_mean[i][ch].abs() < 1e-12);
            }
            let co = rf.co_channels(i);
            assert!(co.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(co[3] < 1e-12);
        }
        let g = 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6;
        assert!((rf.gray[0] - g).abs() < 1e-9);
    }

    #[test]
    fn region_features_split_two_tone() {
        let img = two_tone(8, 8);
        let e = compute_edges_fallback(&img).unwrap();
        let rm = superpixels(&e, 2).unwrap();
        let stack = imgproc::pixel_features(&img, &[0.5, 1.5, 2.0]).unwrap();
        let rf = region_features(&img, &stack, &rm).unwrap();
        let dark = rm.labels()[[0, 0]] as usize;
        let light = rm.labels()[[0, 7]] as usize;
        assert!(rf.gray[dark] < 0.1);
        assert!(rf.gray[light] > 0.9);
        assert!(rf.lab_mean[light][0] > 90.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn canonicalized_maps_validate(
                seed in 0u64..1000,
                h in 2usize..8,
                w in 2usize..8,
                k in 1u32..5,
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let raw = Array2::from_shape_fn((h, w), |_| rng.random_range(0..k));
                let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
                prop_assert!(rm.validate().is_ok());
                prop_assert_eq!(rm.sizes().iter().sum::<usize>(), h * w);
            }

            #[test]
            fn trees_on_random_partitions_validate(
                seed in 0u64..1000,
                h in 3usize..8,
                w in 3usize..8,
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let raw = Array2::from_shape_fn((h, w), |_| rng.random_range(0..4u32));
                let rm: RegionMap<f64> = RegionMap::from_labels(&raw).unwrap();
                prop_assume!(rm.len() >= 2);
                let grid = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0));
                let tree = SegTree::build(&rm, &EdgeMap::new(grid)).unwrap();
                prop_assert!(tree.validate().is_ok());
                prop_assert_eq!(tree.len(), 2 * rm.len() - 1);
            }
        }
    }
}
