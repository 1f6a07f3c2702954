//! Combined graph operator and its smallest nontrivial eigenvectors.
//!
//! The energy being minimized is `y^T (D - W + mu M) y` over `y^T D y = 1`,
//! where D - W is the graph Laplacian of the local affinities and
//! `M = (I - K)^T (I - K)` penalizes deviation from the global linear
//! reconstruction. Minimizers are the eigenvectors of the generalized
//! system `(D - W + mu M) y = lambda D y` with the smallest eigenvalues;
//! the constant direction (always an eigenvector with eigenvalue ~0) is
//! removed by deflation rather than by dropping the first computed pair,
//! since the nullspace need not be one-dimensional.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::global_graph::GlobalCoefficients;
use crate::local_graph::LocalAffinity;
use crate::scalar::{flt, Real};
use crate::sparse::CsrMatrix;

/// The assembled symmetric operator `A = D - W + mu M` and the degree
/// diagonal D of the generalized problem.
#[derive(Debug, Clone)]
pub struct SpectralOperator<F> {
    pub a: CsrMatrix<F>,
    pub d: Vec<F>,
}

/// Eigenvectors of the generalized problem, ordered by ascending
/// eigenvalue with the constant direction excluded.
///
/// Columns are D-normalized (`y^T D y = 1`) and sign-fixed (first
/// significant entry positive). `residuals` holds the relative residual
/// `|A y - lambda D y| / |D y|` per column.
#[derive(Debug, Clone)]
pub struct EigenBasis<F> {
    pub vectors: DMatrix<F>,
    pub eigenvalues: Vec<F>,
    pub residuals: Vec<F>,
    pub tolerance: F,
}

/// Assembles `A = (D - W) + mu (I - K)^T (I - K)` explicitly.
///
/// Both summands are bitwise symmetric (the Laplacian by construction, the
/// Gram product by the pairing of its accumulation order), so A is too.
pub fn assemble_operator<F: Real>(
    aff: &LocalAffinity<F>,
    gc: &GlobalCoefficients<F>,
    mu: F,
) -> Result<SpectralOperator<F>> {
    let n = aff.len();
    if gc.k.n_rows() != n || gc.k.n_cols() != n {
        return Err(Error::Dimension {
            expected: format!("{n}x{n} coefficients"),
            got: format!("{}x{}", gc.k.n_rows(), gc.k.n_cols()),
        });
    }
    if mu < F::zero() {
        return Err(Error::Contract("mu must be nonnegative".into()));
    }
    // Laplacian D - W: diagonal degrees, negated affinities off-diagonal.
    let laplacian = CsrMatrix::from_diagonal(&aff.degree).add_scaled(&aff.w, -F::one());
    let a = if mu == F::zero() {
        laplacian
    } else {
        let imk = CsrMatrix::identity(n).add_scaled(&gc.k, -F::one());
        let m = imk.transpose().matmul(&imk);
        laplacian.add_scaled(&m, mu)
    };
    Ok(SpectralOperator {
        a,
        d: aff.degree.clone(),
    })
}

impl<F: Real> SpectralOperator<F> {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Energy `y^T A y` of a labeling vector.
    pub fn energy(&self, y: &[F]) -> F {
        let mut ay = vec![F::zero(); y.len()];
        self.a.matvec(y, &mut ay);
        y.iter().zip(&ay).map(|(&a, &b)| a * b).sum()
    }
}

/// Min-max rescaling of an eigenvector to [0, 1]; a (numerically) constant
/// vector maps to all 0.5 by convention.
pub fn normalize_eigenvector<F: Real>(y: &[F]) -> Vec<F> {
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for &v in y {
        lo = Float::min(lo, v);
        hi = Float::max(hi, v);
    }
    let span = hi - lo;
    let scale = Float::max(Float::max(Float::abs(lo), Float::abs(hi)), F::one());
    if !(span > F::epsilon() * scale * flt::<F>(16.0)) {
        return vec![flt::<F>(0.5); y.len()];
    }
    y.iter().map(|&v| (v - lo) / span).collect()
}

/// Matvec of the symmetrized operator `D^{-1/2} A D^{-1/2}`.
struct ScaledOp<'a, F> {
    a: &'a CsrMatrix<F>,
    dis: Vec<F>,
    scratch: std::cell::RefCell<Vec<F>>,
}

impl<'a, F: Real> ScaledOp<'a, F> {
    fn new(op: &'a SpectralOperator<F>) -> Self {
        let dis = op.d.iter().map(|&v| F::one() / Float::sqrt(v)).collect();
        ScaledOp {
            a: &op.a,
            dis,
            scratch: std::cell::RefCell::new(vec![F::zero(); op.d.len()]),
        }
    }

    fn apply(&self, x: &[F], out: &mut [F]) {
        let mut tmp = self.scratch.borrow_mut();
        for (t, (&xi, &s)) in tmp.iter_mut().zip(x.iter().zip(&self.dis)) {
            *t = xi * s;
        }
        self.a.matvec(&tmp, out);
        for (o, &s) in out.iter_mut().zip(&self.dis) {
            *o *= s;
        }
    }

    fn apply_matrix(&self, x: &DMatrix<F>) -> DMatrix<F> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        let mut col_in = vec![F::zero(); x.nrows()];
        let mut col_out = vec![F::zero(); x.nrows()];
        for c in 0..x.ncols() {
            for r in 0..x.nrows() {
                col_in[r] = x[(r, c)];
            }
            self.apply(&col_in, &mut col_out);
            for r in 0..x.nrows() {
                out[(r, c)] = col_out[r];
            }
        }
        out
    }
}

/// Removes the component of each column along `z0` (unit vector).
fn deflate<F: Real>(x: &mut DMatrix<F>, z0: &DVector<F>) {
    for c in 0..x.ncols() {
        let dot: F = (0..x.nrows()).map(|r| x[(r, c)] * z0[r]).sum();
        for r in 0..x.nrows() {
            x[(r, c)] -= dot * z0[r];
        }
    }
}

/// Orthonormalizes the columns of `s` by SVD, dropping directions with
/// singular value below 1e-10 of the largest.
fn orthonormalize<F: Real>(s: DMatrix<F>) -> Result<DMatrix<F>> {
    let svd = s.svd(true, false);
    let u = svd.u.expect("svd requested u");
    let sv = svd.singular_values;
    let smax = sv.iter().cloned().fold(F::zero(), |a, b| if b > a { b } else { a });
    if !(smax > F::zero()) {
        return Err(Error::Solver {
            message: "subspace collapsed to zero".into(),
            residuals: vec![],
        });
    }
    let cutoff = smax * flt::<F>(1e-10);
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cutoff).collect();
    let mut out = DMatrix::zeros(u.nrows(), keep.len());
    for (oc, &ic) in keep.iter().enumerate() {
        for r in 0..u.nrows() {
            out[(r, oc)] = u[(r, ic)];
        }
    }
    Ok(out)
}

/// Rayleigh-Ritz on the span of `basis`: returns (eigenvalues ascending,
/// ritz vectors) limited to `take` pairs.
fn rayleigh_ritz<F: Real>(
    op: &ScaledOp<'_, F>,
    basis: &DMatrix<F>,
    take: usize,
) -> (Vec<F>, DMatrix<F>) {
    let ab = op.apply_matrix(basis);
    let mut t = basis.transpose() * &ab;
    // Symmetrize to wash out accumulation asymmetry before the eigensolve.
    let tt = t.transpose();
    t = (t + tt) * flt::<F>(0.5);
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let take = take.min(order.len());
    let mut vals = Vec::with_capacity(take);
    let mut q = DMatrix::zeros(eig.eigenvectors.nrows(), take);
    for (oc, &ic) in order.iter().take(take).enumerate() {
        vals.push(eig.eigenvalues[ic]);
        for r in 0..q.nrows() {
            q[(r, oc)] = eig.eigenvectors[(r, ic)];
        }
    }
    (vals, basis * q)
}

/// Per-column relative residuals in original coordinates:
/// `|A y - lambda D y| / |D y|` expressed through the transformed iterate.
fn column_residuals<F: Real>(
    op: &ScaledOp<'_, F>,
    sqrt_d: &[F],
    x: &DMatrix<F>,
    vals: &[F],
) -> Vec<F> {
    let ax = op.apply_matrix(x);
    let mut out = Vec::with_capacity(vals.len());
    for c in 0..vals.len() {
        let mut num = F::zero();
        let mut den = F::zero();
        for r in 0..x.nrows() {
            let rt = (ax[(r, c)] - vals[c] * x[(r, c)]) * sqrt_d[r];
            let zt = x[(r, c)] * sqrt_d[r];
            num += rt * rt;
            den += zt * zt;
        }
        out.push(Float::sqrt(num) / Float::max(Float::sqrt(den), F::min_positive_value()));
    }
    out
}

/// Solves for the `d` smallest nontrivial generalized eigenpairs of
/// `A y = lambda D y`.
///
/// Small problems are solved densely; larger ones by a block LOBPCG-style
/// iteration with Jacobi preconditioning, seeded deterministically. Either
/// path deflates the constant direction against the D-inner product and
/// verifies the residual bound before returning.
pub fn solve_partitions<F: Real>(
    op: &SpectralOperator<F>,
    d: usize,
    tol: F,
    max_iters: usize,
    seed: u64,
) -> Result<EigenBasis<F>> {
    let n = op.len();
    if d == 0 {
        return Err(Error::Contract("eigenvector count d must be >= 1".into()));
    }
    if d + 1 >= n {
        return Err(Error::Contract(format!(
            "need d < N - 1 (d = {d}, N = {n})"
        )));
    }
    if !(tol > F::zero()) {
        return Err(Error::Contract("solver tolerance must be positive".into()));
    }
    if let Some(i) = op.d.iter().position(|&v| !(v > F::zero())) {
        return Err(Error::Contract(format!(
            "degree diagonal must be positive, entry {i} is not"
        )));
    }

    let sqrt_d: Vec<F> = op.d.iter().map(|&v| Float::sqrt(v)).collect();
    // Unit constant direction in transformed coordinates.
    let z0_norm = Float::sqrt(op.d.iter().cloned().sum::<F>());
    let z0 = DVector::from_iterator(n, sqrt_d.iter().map(|&v| v / z0_norm));

    let scaled = ScaledOp::new(op);
    let block = (d + 2).min(n - 1);

    let (vals, x) = if n <= 3 * block + 2 {
        dense_eigen(&scaled, &z0, n, d)?
    } else {
        lobpcg(&scaled, &z0, &sqrt_d, n, d, block, tol, max_iters, seed)?
    };

    // Back-transform, D-normalize, fix signs, and verify residuals.
    let mut vectors = DMatrix::zeros(n, d);
    for c in 0..d {
        for r in 0..n {
            vectors[(r, c)] = x[(r, c)] / sqrt_d[r];
        }
    }
    for c in 0..d {
        let ydy: F = (0..n)
            .map(|r| vectors[(r, c)] * vectors[(r, c)] * op.d[r])
            .sum();
        let scale = F::one() / Float::sqrt(ydy);
        for r in 0..n {
            vectors[(r, c)] *= scale;
        }
        let maxabs = (0..n)
            .map(|r| Float::abs(vectors[(r, c)]))
            .fold(F::zero(), |a, b| if b > a { b } else { a });
        let thresh = maxabs * flt::<F>(1e-6);
        if let Some(r0) = (0..n).find(|&r| Float::abs(vectors[(r, c)]) > thresh) {
            if vectors[(r0, c)] < F::zero() {
                for r in 0..n {
                    vectors[(r, c)] = -vectors[(r, c)];
                }
            }
        }
    }

    let mut residuals = Vec::with_capacity(d);
    let mut ay = vec![F::zero(); n];
    let mut col = vec![F::zero(); n];
    for c in 0..d {
        for r in 0..n {
            col[r] = vectors[(r, c)];
        }
        op.a.matvec(&col, &mut ay);
        let mut num = F::zero();
        let mut den = F::zero();
        for r in 0..n {
            let dy = op.d[r] * col[r];
            let rr = ay[r] - vals[c] * dy;
            num += rr * rr;
            den += dy * dy;
        }
        residuals.push(Float::sqrt(num) / Float::max(Float::sqrt(den), F::min_positive_value()));
    }
    if residuals.iter().any(|&r| !(r <= tol)) {
        return Err(Error::Solver {
            message: format!("eigensolver missed the residual bound {:?}", tol.to_f64()),
            residuals: residuals.iter().map(|r| r.to_f64().unwrap_or(f64::NAN)).collect(),
        });
    }
    let floor = flt::<F>(-1e-10);
    if let Some(c) = vals.iter().position(|&v| v < floor) {
        return Err(Error::Invariant(format!(
            "eigenvalue {c} is {:?}, below the PSD floor",
            vals[c].to_f64()
        )));
    }

    Ok(EigenBasis {
        vectors,
        eigenvalues: vals,
        residuals,
        tolerance: tol,
    })
}

/// Dense path: form the symmetrized operator, push the constant direction
/// to the top of the spectrum, and read off the d smallest pairs.
fn dense_eigen<F: Real>(
    scaled: &ScaledOp<'_, F>,
    z0: &DVector<F>,
    n: usize,
    d: usize,
) -> Result<(Vec<F>, DMatrix<F>)> {
    let mut dense = DMatrix::zeros(n, n);
    for r in 0..n {
        for (c, v) in scaled.a.row(r) {
            dense[(r, c)] = v * scaled.dis[r] * scaled.dis[c];
        }
    }
    // Rank-one shift sends the trivial direction above the whole spectrum
    // (Gershgorin bounds every eigenvalue by the max absolute row sum).
    let mut bound = F::zero();
    for r in 0..n {
        let row_sum: F = (0..n).map(|c| Float::abs(dense[(r, c)])).sum();
        bound = Float::max(bound, row_sum);
    }
    let sigma = bound + F::one();
    for r in 0..n {
        for c in 0..n {
            dense[(r, c)] += sigma * z0[r] * z0[c];
        }
    }
    let eig = dense.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let mut vals = Vec::with_capacity(d);
    let mut x = DMatrix::zeros(n, d);
    for (oc, &ic) in order.iter().take(d).enumerate() {
        vals.push(eig.eigenvalues[ic]);
        for r in 0..n {
            x[(r, oc)] = eig.eigenvectors[(r, ic)];
        }
    }
    Ok((vals, x))
}

/// Block LOBPCG-style iteration on the deflated symmetrized operator.
#[allow(clippy::too_many_arguments)]
fn lobpcg<F: Real>(
    scaled: &ScaledOp<'_, F>,
    z0: &DVector<F>,
    sqrt_d: &[F],
    n: usize,
    d: usize,
    block: usize,
    tol: F,
    max_iters: usize,
    seed: u64,
) -> Result<(Vec<F>, DMatrix<F>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, block, |_, _| flt::<F>(rng.random_range(-1.0..1.0)));
    deflate(&mut x, z0);
    let mut x = orthonormalize(x)?;

    // Jacobi preconditioner on the symmetrized diagonal.
    let diag_a = scaled.a.diagonal();
    let precond: Vec<F> = (0..n)
        .map(|i| {
            let di = diag_a[i] * scaled.dis[i] * scaled.dis[i];
            if Float::abs(di) > F::min_positive_value() {
                F::one() / di
            } else {
                F::one()
            }
        })
        .collect();

    let mut prev: Option<DMatrix<F>> = None;
    let mut last_residuals: Vec<F> = vec![F::infinity(); d];
    for _ in 0..max_iters {
        let cols = x.ncols();
        let (vals, ritz) = rayleigh_ritz(scaled, &x, cols);
        let ax = scaled.apply_matrix(&ritz);

        let res = column_residuals(scaled, sqrt_d, &ritz, &vals);
        last_residuals = res.iter().take(d).cloned().collect();
        if last_residuals.iter().all(|&r| r <= tol) {
            let mut out = DMatrix::zeros(n, d);
            for c in 0..d {
                for r in 0..n {
                    out[(r, c)] = ritz[(r, c)];
                }
            }
            return Ok((vals.into_iter().take(d).collect(), out));
        }

        // Preconditioned residual block.
        let mut w = DMatrix::zeros(n, cols);
        for c in 0..cols {
            for r in 0..n {
                w[(r, c)] = precond[r] * (ax[(r, c)] - vals[c] * ritz[(r, c)]);
            }
        }
        deflate(&mut w, z0);

        // Conjugate block: movement since the previous iterate.
        let p = prev.as_ref().map(|old: &DMatrix<F>| {
            let proj = old.transpose() * &ritz;
            let mut p = ritz.clone() - old * proj;
            deflate(&mut p, z0);
            p
        });

        let total = cols + w.ncols() + p.as_ref().map_or(0, |p| p.ncols());
        let mut subspace = DMatrix::zeros(n, total);
        let mut at = 0;
        for src in [Some(&ritz), Some(&w), p.as_ref()].into_iter().flatten() {
            for c in 0..src.ncols() {
                for r in 0..n {
                    subspace[(r, at)] = src[(r, c)];
                }
                at += 1;
            }
        }
        let basis = orthonormalize(subspace)?;
        let (_, next) = rayleigh_ritz(scaled, &basis, block.min(basis.ncols()));
        prev = Some(ritz);
        let mut next = next;
        deflate(&mut next, z0);
        x = orthonormalize(next)?;
    }

    Err(Error::Solver {
        message: format!(
            "no convergence within {max_iters} iterations (tolerance {:e})",
            tol.to_f64().unwrap_or(f64::NAN)
        ),
        residuals: last_residuals
            .iter()
            .map(|r| r.to_f64().unwrap_or(f64::NAN))
            .collect(),
    })
}

impl<F: Real> EigenBasis<F> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Checks residual bounds, eigenvalue ordering and floor, and pairwise
    /// D-orthogonality.
    pub fn validate(&self, op: &SpectralOperator<F>) -> Result<()> {
        let n = op.len();
        let d = self.len();
        for c in 0..d {
            if !(self.residuals[c] <= self.tolerance) {
                return Err(Error::Invariant(format!(
                    "column {c} residual {:?} exceeds tolerance",
                    self.residuals[c].to_f64()
                )));
            }
        }
        let floor = flt::<F>(-1e-10);
        for c in 0..d {
            if self.eigenvalues[c] < floor {
                return Err(Error::Invariant(format!(
                    "eigenvalue {c} below PSD floor"
                )));
            }
            if c > 0 && self.eigenvalues[c] < self.eigenvalues[c - 1] {
                return Err(Error::Invariant("eigenvalues not ascending".into()));
            }
        }
        let ortho_tol = flt::<F>(1e-6);
        for a in 0..d {
            for b in 0..a {
                let dot: F = (0..n)
                    .map(|r| self.vectors[(r, a)] * op.d[r] * self.vectors[(r, b)])
                    .sum();
                if Float::abs(dot) > ortho_tol {
                    return Err(Error::Invariant(format!(
                        "columns {a} and {b} are not D-orthogonal: {:?}",
                        dot.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }
}
