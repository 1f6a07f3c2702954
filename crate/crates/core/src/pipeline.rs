//! End-to-end orchestration: region structure, graph construction and
//! partitioning, and multi-class segmentation, with per-phase wall-clock
//! timing and always-on operator/solution invariant checks.

use std::path::PathBuf;
use std::time::Instant;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AutoOr, PipelineConfig};
use crate::error::{Error, Result};
use crate::global_graph::{build_global, GlobalCoefficients};
use crate::imgproc::{pixel_features, ImagePlane};
use crate::local_graph::{build_affinity, fit_cooccurrence, LocalAffinity};
use crate::multiclass::{
    beta_sweep, kmeans_prior, node_histograms, EigenHistogram, PriorSegmentation, PylonLabeling,
    SoftBoundary,
};
use crate::regions::{
    compute_edges_fallback, ingest_external, region_features, superpixels, BoundaryStats, EdgeMap,
    RegionFeatures, RegionMap, SegTree,
};
use crate::scalar::{count, flt, Real};
use crate::spectral::{assemble_operator, solve_partitions, EigenBasis, SpectralOperator};

/// Phase labels used in manifests and timing tables.
pub const PHASE_REGION: &str = "Region structure generation";
pub const PHASE_GRAPH: &str = "Graph construct. and partition";
pub const PHASE_MULTI: &str = "Multi-class segmentation";
pub const PHASE_TOTAL: &str = "Total";

/// Number of random probe vectors for the operator PSD check.
const PSD_PROBES: usize = 100;
/// Relative floor for the probe Rayleigh quotients.
const PSD_FLOOR: f64 = -1e-10;

/// Where the over-segmentation comes from.
#[derive(Debug, Clone)]
pub enum RegionSource {
    /// Detect edges internally and grow superpixels toward `target_n`
    /// regions (`None` uses the configured count).
    Internal { target_n: Option<usize> },
    /// Load a precomputed label grid and edge map from disk.
    External { labels: PathBuf, edges: PathBuf },
}

impl Default for RegionSource {
    fn default() -> Self {
        RegionSource::Internal { target_n: None }
    }
}

/// Post-hoc evidence that the run satisfied its operator invariants.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    /// Smallest probe Rayleigh quotient y'Ay / y'y observed.
    pub min_rayleigh: f64,
    /// Number of random probes behind `min_rayleigh`.
    pub rayleigh_probes: usize,
    /// Largest relative eigenpair residual accepted by the solver.
    pub max_residual: f64,
}

/// Wall-clock seconds per phase, plus the whole-run clock.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub region_structure: f64,
    pub graph_partition: f64,
    pub multiclass: f64,
    pub total: f64,
}

impl PhaseTimings {
    /// Sum of the three phase clocks (excludes `total`).
    pub fn sum(&self) -> f64 {
        self.region_structure + self.graph_partition + self.multiclass
    }

    /// Rows in report order, ending with the total.
    pub fn rows(&self) -> [(&'static str, f64); 4] {
        [
            (PHASE_REGION, self.region_structure),
            (PHASE_GRAPH, self.graph_partition),
            (PHASE_MULTI, self.multiclass),
            (PHASE_TOTAL, self.total),
        ]
    }

    /// Checks all clocks are nonnegative and the total tracks the phase sum
    /// within 5%.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.rows() {
            if !(v >= 0.0) {
                return Err(Error::Invariant(format!("negative {name} time: {v}")));
            }
        }
        let sum = self.sum();
        if (self.total - sum).abs() > 0.05 * self.total.max(sum).max(1e-9) {
            return Err(Error::Invariant(format!(
                "total clock {:.6}s differs from phase sum {:.6}s by more than 5%",
                self.total, sum
            )));
        }
        Ok(())
    }
}

/// Everything produced up to and including the spectral partition.
#[derive(Debug)]
pub struct PartitionOutput<F> {
    pub regions: RegionMap<F>,
    pub edges: EdgeMap<F>,
    pub stats: BoundaryStats<F>,
    pub tree: SegTree<F>,
    pub feats: RegionFeatures<F>,
    pub affinity: LocalAffinity<F>,
    pub coefficients: GlobalCoefficients<F>,
    pub basis: EigenBasis<F>,
    pub diagnostics: Diagnostics,
    pub region_time: f64,
    pub graph_time: f64,
}

/// Full pipeline result.
#[derive(Debug)]
pub struct PipelineOutput<F> {
    pub partition: PartitionOutput<F>,
    pub hists: Vec<EigenHistogram<F>>,
    pub prior: PriorSegmentation<F>,
    pub labelings: Vec<PylonLabeling<F>>,
    pub soft: SoftBoundary<F>,
    pub phases: PhaseTimings,
}

/// Smallest Rayleigh quotient of the operator over seeded random probes.
///
/// The operator is positive semidefinite by construction, so a clearly
/// negative quotient means assembly went wrong.
fn probe_min_rayleigh<F: Real>(op: &SpectralOperator<F>, probes: usize, seed: u64) -> f64 {
    // Decorrelate from the solver's starting block without extra state.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x505a_5052_4f42_4553);
    let n = op.len();
    let mut min_q = f64::INFINITY;
    for _ in 0..probes {
        let y: Vec<F> = (0..n)
            .map(|_| flt::<F>(rng.random_range(-1.0f64..1.0)))
            .collect();
        let norm2: F = y.iter().map(|&v| v * v).sum();
        if norm2 <= F::min_positive_value() {
            continue;
        }
        let q = (op.energy(&y) / norm2).to_f64().unwrap_or(f64::NAN);
        if q < min_q {
            min_q = q;
        }
    }
    min_q
}

fn check_operator_psd<F: Real>(op: &SpectralOperator<F>, seed: u64) -> Result<f64> {
    let min_q = probe_min_rayleigh(op, PSD_PROBES, seed);
    if !(min_q >= PSD_FLOOR) {
        return Err(Error::Invariant(format!(
            "operator failed the PSD probe: min Rayleigh quotient {min_q:.3e} < {PSD_FLOOR:.0e}"
        )));
    }
    Ok(min_q)
}

/// Runs region structure generation and the graph partition phases.
pub fn run_partition<F: Real>(
    img: &ImagePlane<F>,
    cfg: &PipelineConfig<F>,
    source: &RegionSource,
    seed: u64,
) -> Result<PartitionOutput<F>> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());

    let clock = Instant::now();
    let stack = pixel_features(img, &cfg.gammas)?;
    let (regions, edges) = match source {
        RegionSource::Internal { target_n } => {
            let edges = compute_edges_fallback(img)?;
            let regions = superpixels(&edges, target_n.unwrap_or(cfg.target_n))?;
            (regions, edges)
        }
        RegionSource::External { labels, edges } => {
            let (regions, edges) = ingest_external::<F>(labels, edges)?;
            if regions.dims() != (h, w) {
                return Err(Error::Dimension {
                    expected: format!("{:?} external label grid", (h, w)),
                    got: format!("{:?}", regions.dims()),
                });
            }
            (regions, edges)
        }
    };
    let feats = region_features(img, &stack, &regions)?;
    let stats = BoundaryStats::compute(&regions, &edges)?;
    let tree = SegTree::build(&regions, &edges)?;
    let region_time = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let bandwidth = match cfg.bandwidth {
        AutoOr::Auto => None,
        AutoOr::Fixed(v) => Some(v),
    };
    let model = fit_cooccurrence(
        &regions,
        &feats,
        cfg.e1,
        bandwidth,
        cfg.bins,
        cfg.density_floor,
    )?;
    let affinity = build_affinity(&regions, &feats, &model, cfg.e2, cfg.affinity_log_clip)?;
    let range = cfg
        .geodesic_range
        .resolve(flt::<F>(0.75) * Float::max(count::<F>(w), count::<F>(h)));
    let coefficients = build_global(&regions, &feats, cfg.r, cfg.alpha, range)?;
    let op = assemble_operator(&affinity, &coefficients, cfg.mu)?;
    let min_rayleigh = check_operator_psd(&op, seed)?;
    let basis = solve_partitions(&op, cfg.d, cfg.solver_tol, cfg.solver_budget(), seed)?;
    basis.validate(&op)?;
    let max_residual = basis
        .residuals
        .iter()
        .map(|r| r.to_f64().unwrap_or(f64::NAN))
        .fold(0.0f64, f64::max);
    let graph_time = clock.elapsed().as_secs_f64();

    Ok(PartitionOutput {
        regions,
        edges,
        stats,
        tree,
        feats,
        affinity,
        coefficients,
        basis,
        diagnostics: Diagnostics {
            min_rayleigh,
            rayleigh_probes: PSD_PROBES,
            max_residual,
        },
        region_time,
        graph_time,
    })
}

/// Runs the full pipeline: partition plus multi-class segmentation.
pub fn run_pipeline<F: Real>(
    img: &ImagePlane<F>,
    cfg: &PipelineConfig<F>,
    source: &RegionSource,
    seed: u64,
) -> Result<PipelineOutput<F>> {
    let run_clock = Instant::now();
    let partition = run_partition(img, cfg, source, seed)?;

    let clock = Instant::now();
    let hists = node_histograms(&partition.tree, &partition.basis.vectors, cfg.l)?;
    let prior = kmeans_prior(
        &partition.tree,
        &partition.basis.vectors,
        &hists,
        cfg.l,
        seed,
        cfg.kmeans_weighted,
        cfg.kmeans_max_iters,
    )?;
    let (soft, labelings) = beta_sweep(
        &partition.tree,
        &hists,
        &prior,
        &cfg.betas,
        &partition.regions,
        &partition.stats,
        cfg.gamma_b,
    )?;
    for labeling in &labelings {
        labeling.validate(&partition.tree)?;
    }
    let multiclass = clock.elapsed().as_secs_f64();

    let phases = PhaseTimings {
        region_structure: partition.region_time,
        graph_partition: partition.graph_time,
        multiclass,
        total: run_clock.elapsed().as_secs_f64(),
    };
    phases.validate()?;

    Ok(PipelineOutput {
        partition,
        hists,
        prior,
        labelings,
        soft,
        phases,
    })
}
