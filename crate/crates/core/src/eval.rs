//! Region-based segmentation metrics: covering, probabilistic Rand index,
//! and variation of information, with best-fixed-scale (ODS) and
//! best-per-image-scale (OIS) aggregation over a threshold sweep.

use ndarray::Array2;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::{count, Real};

/// A per-pixel partition with compact segment ids in [0, count).
#[derive(Debug, Clone)]
pub struct LabeledSegmentation {
    labels: Array2<u32>,
    count: usize,
}

impl LabeledSegmentation {
    /// Compacts arbitrary ids in row-major first-visit order.
    pub fn from_labels(raw: &Array2<u32>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Contract("empty segmentation".into()));
        }
        let mut names = std::collections::BTreeMap::new();
        let mut labels = raw.clone();
        for v in labels.iter_mut() {
            let next = names.len() as u32;
            *v = *names.entry(*v).or_insert(next);
        }
        Ok(LabeledSegmentation {
            labels,
            count: names.len(),
        })
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.count];
        for &v in self.labels.iter() {
            out[v as usize] += 1;
        }
        out
    }
}

/// Joint label counts: `table[(i, j)]` is the number of pixels labeled i in
/// `a` and j in `b`.
fn contingency(a: &LabeledSegmentation, b: &LabeledSegmentation) -> Result<Array2<usize>> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension {
            expected: format!("{:?}", a.dims()),
            got: format!("{:?}", b.dims()),
        });
    }
    let mut table = Array2::zeros((a.count, b.count));
    for (&x, &y) in a.labels.iter().zip(b.labels.iter()) {
        table[(x as usize, y as usize)] += 1;
    }
    Ok(table)
}

fn check_gts(gts: &[LabeledSegmentation]) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::Contract("no ground-truth segmentations".into()));
    }
    Ok(())
}

/// Covering of the ground truth by the proposal: the size-weighted best
/// IoU over proposal segments, averaged over ground truths.
pub fn covering<F: Real>(
    seg: &LabeledSegmentation,
    gts: &[LabeledSegmentation],
) -> Result<F> {
    check_gts(gts)?;
    let seg_sizes = seg.sizes();
    let total = count::<F>(seg.pixels());
    let mut sum = F::zero();
    for gt in gts {
        let table = contingency(gt, seg)?;
        let gt_sizes = gt.sizes();
        let mut value = F::zero();
        for (r, &r_size) in gt_sizes.iter().enumerate() {
            let mut best = F::zero();
            for (p, &p_size) in seg_sizes.iter().enumerate() {
                let inter = table[(r, p)];
                if inter == 0 {
                    continue;
                }
                let union = r_size + p_size - inter;
                let iou = count::<F>(inter) / count::<F>(union);
                if iou > best {
                    best = iou;
                }
            }
            value += count::<F>(r_size) / total * best;
        }
        sum += value;
    }
    Ok(sum / count::<F>(gts.len()))
}

fn choose2(n: usize) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// Rand index against each ground truth, averaged: the fraction of pixel
/// pairs on which the two partitions agree.
pub fn pri<F: Real>(seg: &LabeledSegmentation, gts: &[LabeledSegmentation]) -> Result<F> {
    check_gts(gts)?;
    let n = seg.pixels();
    let pairs = choose2(n);
    if pairs == 0 {
        return Err(Error::Contract("PRI needs at least 2 pixels".into()));
    }
    let seg_pairs: u128 = seg.sizes().iter().map(|&s| choose2(s)).sum();
    let mut sum = F::zero();
    for gt in gts {
        let table = contingency(gt, seg)?;
        let gt_pairs: u128 = gt.sizes().iter().map(|&s| choose2(s)).sum();
        let joint_pairs: u128 = table.iter().map(|&c| choose2(c)).sum();
        // same-same pairs: joint_pairs; diff-diff: pairs - gt_pairs
        // - seg_pairs + joint_pairs (inclusion-exclusion).
        let agreements = pairs + 2 * joint_pairs - gt_pairs - seg_pairs;
        sum += count::<F>(agreements as usize) / count::<F>(pairs as usize);
    }
    Ok(sum / count::<F>(gts.len()))
}

/// Variation of information against each ground truth, averaged:
/// H(seg) + H(gt) - 2 I(seg; gt) in nats.
pub fn voi<F: Real>(seg: &LabeledSegmentation, gts: &[LabeledSegmentation]) -> Result<F> {
    check_gts(gts)?;
    let n = count::<F>(seg.pixels());
    let entropy = |counts: &[usize]| -> F {
        let mut h = F::zero();
        for &c in counts {
            if c > 0 {
                let p = count::<F>(c) / n;
                h -= p * Float::ln(p);
            }
        }
        h
    };
    let h_seg = entropy(&seg.sizes());
    let mut sum = F::zero();
    for gt in gts {
        let table = contingency(gt, seg)?;
        let h_gt = entropy(&gt.sizes());
        let joint: Vec<usize> = table.iter().cloned().collect();
        let h_joint = entropy(&joint);
        // VoI = H(a|b) + H(b|a) = 2 H(a,b) - H(a) - H(b).
        let v = (h_joint + h_joint) - h_seg - h_gt;
        sum += Float::max(v, F::zero());
    }
    Ok(sum / count::<F>(gts.len()))
}

/// All three metrics of one proposal against a ground-truth set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues<F> {
    pub covering: F,
    pub pri: F,
    pub voi: F,
}

pub fn all_metrics<F: Real>(
    seg: &LabeledSegmentation,
    gts: &[LabeledSegmentation],
) -> Result<MetricValues<F>> {
    Ok(MetricValues {
        covering: covering(seg, gts)?,
        pri: pri(seg, gts)?,
        voi: voi(seg, gts)?,
    })
}

/// ODS/OIS summary of a per-image, per-scale metric table.
#[derive(Debug, Clone)]
pub struct BenchmarkReport<F> {
    /// Index into the shared scale grid chosen by ODS per metric.
    pub ods_scale: [usize; 3],
    /// ODS values: covering, pri, voi.
    pub ods: MetricValues<F>,
    /// OIS values: covering, pri, voi.
    pub ois: MetricValues<F>,
}

/// Aggregates a table indexed `[image][scale]`. All images must share the
/// scale grid. Covering and PRI are maximized, VoI minimized.
pub fn aggregate<F: Real>(table: &[Vec<MetricValues<F>>]) -> Result<BenchmarkReport<F>> {
    if table.is_empty() || table[0].is_empty() {
        return Err(Error::Contract("empty metric table".into()));
    }
    let n_scales = table[0].len();
    if table.iter().any(|row| row.len() != n_scales) {
        return Err(Error::Dimension {
            expected: format!("{n_scales} scales per image"),
            got: "ragged metric table".into(),
        });
    }
    let n_images = count::<F>(table.len());

    let mean_at = |s: usize, f: &dyn Fn(&MetricValues<F>) -> F| -> F {
        table.iter().map(|row| f(&row[s])).sum::<F>() / n_images
    };
    let pick = |f: &dyn Fn(&MetricValues<F>) -> F, maximize: bool| -> (usize, F) {
        let mut best = (0usize, mean_at(0, f));
        for s in 1..n_scales {
            let v = mean_at(s, f);
            if (maximize && v > best.1) || (!maximize && v < best.1) {
                best = (s, v);
            }
        }
        best
    };
    let per_image_best = |f: &dyn Fn(&MetricValues<F>) -> F, maximize: bool| -> F {
        table
            .iter()
            .map(|row| {
                row.iter()
                    .map(f)
                    .fold(if maximize { F::neg_infinity() } else { F::infinity() }, |a, b| {
                        if maximize {
                            Float::max(a, b)
                        } else {
                            Float::min(a, b)
                        }
                    })
            })
            .sum::<F>()
            / n_images
    };

    let (s_cov, ods_cov) = pick(&|m| m.covering, true);
    let (s_pri, ods_pri) = pick(&|m| m.pri, true);
    let (s_voi, ods_voi) = pick(&|m| m.voi, false);
    Ok(BenchmarkReport {
        ods_scale: [s_cov, s_pri, s_voi],
        ods: MetricValues {
            covering: ods_cov,
            pri: ods_pri,
            voi: ods_voi,
        },
        ois: MetricValues {
            covering: per_image_best(&|m| m.covering, true),
            pri: per_image_best(&|m| m.pri, true),
            voi: per_image_best(&|m| m.voi, false),
        },
    })
}
