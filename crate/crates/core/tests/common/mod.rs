//! Hand-rolled numerical oracles for the acceptance suite: a Jacobi
//! eigensolver, Gaussian elimination, a dense generalized-eigenpair
//! reference, principal angles under a weighted inner product, and an
//! exhaustive hierarchical-labeling minimizer. Everything here recomputes
//! results from first principles so agreement with the library is evidence,
//! not circularity.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use glseg_core::regions::SegTree;

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues ascending, column eigenvectors in that order).
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square input");
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..300 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m[(r, c)] * m[(r, c)];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(i));
    }
    (values, vectors)
}

/// Solves a dense linear system by Gaussian elimination with partial
/// pivoting. Panics on a numerically singular matrix.
pub fn gaussian_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap();
        assert!(m[(pivot, col)].abs() > 1e-300, "singular system");
        if pivot != col {
            m.swap_rows(pivot, col);
            rhs.swap(pivot, col);
        }
        for row in (col + 1)..n {
            let f = m[(row, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                let v = m[(col, k)];
                m[(row, k)] -= f * v;
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[(row, k)] * x[k];
        }
        x[row] = acc / m[(row, row)];
    }
    x
}

/// Dense reference for the generalized problem A y = lambda D y with
/// symmetric PSD `A` and positive diagonal `D`.
///
/// Transforms to the symmetric problem D^-1/2 A D^-1/2 z = lambda z, solves
/// by Jacobi, maps back with y = D^-1/2 z, drops the eigenvector aligned
/// with the constant direction, and D-normalizes the rest. Returns
/// (eigenvalues ascending, eigenvectors as columns).
pub fn generalized_eigen_oracle(a: &DMatrix<f64>, d: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let dinv_sqrt: Vec<f64> = d.iter().map(|&v| 1.0 / v.sqrt()).collect();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            b[(r, c)] = dinv_sqrt[r] * a[(r, c)] * dinv_sqrt[c];
        }
    }
    // Symmetrize away assembly round-off before iterating.
    for r in 0..n {
        for c in (r + 1)..n {
            let m = 0.5 * (b[(r, c)] + b[(c, r)]);
            b[(r, c)] = m;
            b[(c, r)] = m;
        }
    }
    let (values, z) = jacobi_eigen(&b);

    // The trivial pair maps back to the constant vector; find it by
    // alignment with D^1/2 1 rather than by assuming it sorts first.
    let mut trivial_z: Vec<f64> = d.iter().map(|&v| v.sqrt()).collect();
    let norm = trivial_z.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut trivial_z {
        *v /= norm;
    }
    let mut trivial_col = 0usize;
    let mut best_align = -1.0;
    for col in 0..n {
        let align: f64 = (0..n).map(|r| z[(r, col)] * trivial_z[r]).sum::<f64>().abs();
        if align > best_align {
            best_align = align;
            trivial_col = col;
        }
    }
    assert!(
        best_align > 0.99,
        "no eigenvector aligned with the constant direction (best {best_align})"
    );

    let mut out_values = Vec::with_capacity(n - 1);
    let mut out_vectors = DMatrix::<f64>::zeros(n, n - 1);
    let mut out_col = 0;
    for col in 0..n {
        if col == trivial_col {
            continue;
        }
        let mut y: Vec<f64> = (0..n).map(|r| dinv_sqrt[r] * z[(r, col)]).collect();
        let dnorm = (0..n).map(|r| d[r] * y[r] * y[r]).sum::<f64>().sqrt();
        for v in &mut y {
            *v /= dnorm;
        }
        out_values.push(values[col]);
        for r in 0..n {
            out_vectors[(r, out_col)] = y[r];
        }
        out_col += 1;
    }
    (out_values, out_vectors)
}

/// Principal angles (radians, ascending) between the column spans of `u`
/// and `v` under the inner product diag(d).
pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>, d: &[f64]) -> Vec<f64> {
    let ou = d_orthonormalize(u, d);
    let ov = d_orthonormalize(v, d);
    let k = ou.ncols().min(ov.ncols());
    let n = d.len();
    // S = Ou' D Ov; singular values of S are the angle cosines.
    let mut s = DMatrix::<f64>::zeros(ou.ncols(), ov.ncols());
    for a in 0..ou.ncols() {
        for b in 0..ov.ncols() {
            s[(a, b)] = (0..n).map(|r| d[r] * ou[(r, a)] * ov[(r, b)]).sum();
        }
    }
    let sts = s.transpose() * &s;
    let (evals, _) = jacobi_eigen(&sts);
    let mut angles: Vec<f64> = evals
        .iter()
        .rev()
        .take(k)
        .map(|&e| e.max(0.0).sqrt().min(1.0).acos())
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles
}

/// Gram-Schmidt under the inner product diag(d).
fn d_orthonormalize(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for col in 0..out.ncols() {
        for prev in 0..col {
            let dot: f64 = (0..n).map(|r| d[r] * out[(r, col)] * out[(r, prev)]).sum();
            for r in 0..n {
                let v = out[(r, prev)];
                out[(r, col)] -= dot * v;
            }
        }
        let norm: f64 = (0..n)
            .map(|r| d[r] * out[(r, col)] * out[(r, col)])
            .sum::<f64>()
            .sqrt();
        assert!(norm > 1e-12, "rank-deficient basis");
        for r in 0..n {
            out[(r, col)] /= norm;
        }
    }
    out
}

/// Minimum-energy reference for hierarchical labeling: enumerates every
/// covering of the tree (antichains whose leaf sets partition the leaves)
/// and every label assignment on it.
///
/// `unaries[node][label]` prices assigning `label` at `node`; `pairs`
/// carries Potts costs between leaves. Returns the minimal energy.
pub fn brute_force_labeling_energy(
    tree: &SegTree<f64>,
    unaries: &[Vec<f64>],
    pairs: &[(usize, usize, f64)],
    n_labels: usize,
) -> f64 {
    let coverings = enumerate_coverings(tree, tree.root());
    let n_leaves = tree.n_leaves();
    let mut best = f64::INFINITY;
    for covering in &coverings {
        // Accumulate in descending node order, the library's summation
        // order, so equal minima agree to the last bit.
        let mut covering = covering.clone();
        covering.sort_unstable_by(|a, b| b.cmp(a));
        let mut labels = vec![0u32; covering.len()];
        loop {
            // Energy of this (covering, labels) state.
            let mut leaf_label = vec![0u32; n_leaves];
            let mut energy = 0.0;
            for (slot, &node) in covering.iter().enumerate() {
                energy += unaries[node][labels[slot] as usize];
                for leaf in tree.leaves_under(node) {
                    leaf_label[leaf] = labels[slot];
                }
            }
            for &(a, b, w) in pairs {
                if leaf_label[a] != leaf_label[b] {
                    energy += w;
                }
            }
            if energy < best {
                best = energy;
            }
            // Advance the mixed-radix label counter.
            let mut slot = 0;
            loop {
                if slot == labels.len() {
                    break;
                }
                labels[slot] += 1;
                if (labels[slot] as usize) < n_labels {
                    break;
                }
                labels[slot] = 0;
                slot += 1;
            }
            if slot == labels.len() {
                break;
            }
        }
    }
    best
}

/// All coverings of the subtree at `node`, each a list of node ids.
fn enumerate_coverings(tree: &SegTree<f64>, node: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![node]];
    if let Some((left, right)) = tree.node(node).children {
        for a in enumerate_coverings(tree, left) {
            for b in enumerate_coverings(tree, right) {
                let mut merged = a.clone();
                merged.extend_from_slice(&b);
                out.push(merged);
            }
        }
    }
    out
}

/// Symmetric connected random affinity: a path backbone plus extra chords,
/// weights in [0.2, 2.2). Returns (dense W, degree vector).
pub fn random_affinity(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
    let mut w = DMatrix::<f64>::zeros(n, n);
    let link = |w: &mut DMatrix<f64>, i: usize, j: usize, v: f64| {
        w[(i, j)] = v;
        w[(j, i)] = v;
    };
    for i in 0..(n - 1) {
        let v = 0.2 + 2.0 * rng.random::<f64>();
        link(&mut w, i, i + 1, v);
    }
    for _ in 0..n {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && w[(i, j)] == 0.0 {
            let v = 0.2 + 2.0 * rng.random::<f64>();
            link(&mut w, i, j, v);
        }
    }
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[(i, j)]).sum()).collect();
    (w, degree)
}

/// Random row-stochastic coefficient matrix with a zero diagonal and `r`
/// entries per row.
pub fn random_row_stochastic(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(rng);
        others.truncate(r.min(n - 1));
        let raw: Vec<f64> = others.iter().map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        for (&j, &v) in others.iter().zip(&raw) {
            k[(i, j)] = v / total;
        }
    }
    k
}

/// Dense assembly of the partition operator D - W + mu (I-K)'(I-K).
pub fn dense_operator(w: &DMatrix<f64>, degree: &[f64], k: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let n = degree.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = degree[i];
        for j in 0..n {
            a[(i, j)] -= w[(i, j)];
        }
    }
    if mu != 0.0 {
        let mut imk = DMatrix::<f64>::identity(n, n);
        for r in 0..n {
            for c in 0..n {
                imk[(r, c)] -= k[(r, c)];
            }
        }
        let m = imk.transpose() * &imk;
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] += mu * m[(r, c)];
            }
        }
    }
    a
}
