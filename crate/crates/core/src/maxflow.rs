//! Min-cut machinery: a Dinic max-flow solver and a reduction from
//! submodular pairwise binary energies to s-t cuts.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dinic max-flow on a directed graph with paired residual arcs.
pub struct FlowGraph<F> {
    head: Vec<usize>,
    cap: Vec<F>,
    adj: Vec<Vec<usize>>,
}

impl<F: Real> FlowGraph<F> {
    pub fn new(n_nodes: usize) -> Self {
        FlowGraph {
            head: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Adds a forward arc of capacity `fwd` and its reverse of capacity
    /// `bwd`. Capacities may be infinite, never negative or NaN.
    pub fn add_edge(&mut self, from: usize, to: usize, fwd: F, bwd: F) {
        debug_assert!(fwd >= F::zero() && bwd >= F::zero());
        let id = self.cap.len();
        self.head.push(to);
        self.cap.push(fwd);
        self.adj[from].push(id);
        self.head.push(from);
        self.cap.push(bwd);
        self.adj[to].push(id + 1);
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<u32>> {
        let mut level = vec![u32::MAX; self.len()];
        level[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.head[e];
                if self.cap[e] > F::zero() && level[v] == u32::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if level[t] == u32::MAX {
            None
        } else {
            Some(level)
        }
    }

    fn augment(
        &mut self,
        u: usize,
        t: usize,
        pushed: F,
        level: &[u32],
        iter: &mut [usize],
    ) -> F {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adj[u].len() {
            let e = self.adj[u][iter[u]];
            let v = self.head[e];
            if self.cap[e] > F::zero() && level[v] == level[u] + 1 {
                let got = self.augment(v, t, Float::min(pushed, self.cap[e]), level, iter);
                if got > F::zero() {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        F::zero()
    }

    /// Runs max-flow from `s` to `t` and returns the flow value.
    pub fn run(&mut self, s: usize, t: usize) -> F {
        let mut total = F::zero();
        while let Some(level) = self.levels(s, t) {
            let mut iter = vec![0usize; self.len()];
            loop {
                let pushed = self.augment(s, t, F::infinity(), &level, &mut iter);
                if pushed == F::zero() {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// After `run`, the set of nodes still reachable from `s` in the
    /// residual graph (the source side of a minimum cut).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.head[e];
                if self.cap[e] > F::zero() && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// A pairwise binary energy with submodular terms, minimized exactly by one
/// minimum cut.
///
/// Terms are accumulated in a signed per-variable bias plus directed cut
/// edges; infinities are allowed in the forbidden entries of pairwise
/// tables (they become infinite-capacity constraint arcs, never biases).
pub struct BinaryEnergy<F> {
    bias: Vec<F>,
    edges: Vec<(usize, usize, F)>,
}

impl<F: Real> BinaryEnergy<F> {
    pub fn new(n_vars: usize) -> Self {
        BinaryEnergy {
            bias: vec![F::zero(); n_vars],
            edges: Vec::new(),
        }
    }

    /// Adds a unary term with the given costs at x=0 and x=1. Costs must be
    /// finite except for freezing, where exactly one side may be infinite.
    pub fn add_unary(&mut self, v: usize, cost0: F, cost1: F) {
        self.bias[v] += cost1 - cost0;
    }

    /// Adds a pairwise term with table theta(0,0)=a, theta(0,1)=b,
    /// theta(1,0)=c, theta(1,1)=d. Requires submodularity b + c >= a + d
    /// and finite diagonal entries a, d.
    pub fn add_pairwise(&mut self, i: usize, j: usize, a: F, b: F, c: F, d: F) -> Result<()> {
        debug_assert!(Float::is_finite(a) && Float::is_finite(d));
        if Float::is_finite(b) && Float::is_finite(c) && b + c < a + d {
            return Err(Error::Contract(format!(
                "pairwise term is not submodular: {:?} + {:?} < {:?} + {:?}",
                b.to_f64(),
                c.to_f64(),
                a.to_f64(),
                d.to_f64()
            )));
        }
        if Float::is_finite(c) {
            // theta = a + (c-a)[x_i] + (d-c)[x_j] + (b+c-a-d)[x_i=0][x_j=1]
            self.bias[i] += c - a;
            self.bias[j] += d - c;
            let cap = if Float::is_finite(b) { b + c - a - d } else { F::infinity() };
            if cap > F::zero() {
                self.edges.push((i, j, cap));
            }
        } else if Float::is_finite(b) {
            // theta = a + (b-a)[x_j] + (d-b)[x_i] + (b+c-a-d)[x_i=1][x_j=0]
            self.bias[j] += b - a;
            self.bias[i] += d - b;
            self.edges.push((j, i, F::infinity()));
        } else {
            // Both off-diagonal entries infinite: equality constraint.
            self.bias[i] += d - a;
            self.edges.push((i, j, F::infinity()));
            self.edges.push((j, i, F::infinity()));
        }
        Ok(())
    }

    /// Minimizes the energy; returns the argmin assignment.
    pub fn solve(self) -> Vec<bool> {
        let n = self.bias.len();
        let s = n;
        let t = n + 1;
        let mut g = FlowGraph::new(n + 2);
        for (v, &lambda) in self.bias.iter().enumerate() {
            if lambda > F::zero() {
                // Pay lambda when x_v = 1 (v on the sink side cuts s->v).
                g.add_edge(s, v, lambda, F::zero());
            } else if lambda < F::zero() {
                // Pay -lambda when x_v = 0 (v on the source side cuts v->t).
                g.add_edge(v, t, -lambda, F::zero());
            }
        }
        for (i, j, cap) in self.edges {
            // Cut when x_i = 0 and x_j = 1.
            g.add_edge(i, j, cap, F::zero());
        }
        g.run(s, t);
        let side = g.source_side(s);
        (0..n).map(|v| !side[v]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classic_flow_network_has_the_textbook_value() {
        // Two disjoint augmenting routes of bottleneck 10 and 4, plus a
        // cross edge allowing 4 more: max flow 19.
        let mut g = FlowGraph::new(6);
        g.add_edge(0, 1, 10.0, 0.0);
        g.add_edge(0, 2, 10.0, 0.0);
        g.add_edge(1, 3, 4.0, 0.0);
        g.add_edge(1, 4, 8.0, 0.0);
        g.add_edge(2, 4, 9.0, 0.0);
        g.add_edge(4, 3, 6.0, 0.0);
        g.add_edge(3, 5, 10.0, 0.0);
        g.add_edge(4, 5, 10.0, 0.0);
        let flow = g.run(0, 5);
        assert_eq!(flow, 19.0);
        let side = g.source_side(0);
        assert!(side[0] && !side[5]);
    }

    #[test]
    fn infinite_edges_never_enter_a_finite_cut() {
        let mut g = FlowGraph::new(4);
        g.add_edge(0, 1, 5.0, 0.0);
        g.add_edge(1, 2, f64::INFINITY, 0.0);
        g.add_edge(2, 3, 3.0, 0.0);
        assert_eq!(g.run(0, 3), 3.0);
    }

    fn brute_force_min(
        n: usize,
        unary: &[(f64, f64)],
        pairs: &[(usize, usize, [f64; 4])],
    ) -> (f64, Vec<bool>) {
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0..(1u32 << n) {
            let x: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
            let mut e = 0.0;
            for (v, &(c0, c1)) in unary.iter().enumerate() {
                e += if x[v] { c1 } else { c0 };
            }
            for &(i, j, t) in pairs {
                e += t[usize::from(x[i]) * 2 + usize::from(x[j])];
            }
            if e < best.0 {
                best = (e, x);
            }
        }
        best
    }

    #[test]
    fn random_submodular_energies_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for round in 0..50 {
            let n = rng.random_range(2..=10);
            let unary: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_bool(0.4) {
                        let a = rng.random_range(-2.0..2.0);
                        let d = rng.random_range(-2.0..2.0);
                        // Off-diagonal entries large enough for submodularity.
                        let slack = rng.random_range(0.0..2.0);
                        let b = rng.random_range(0.0..2.0) + (a + d).max(0.0) + slack;
                        let c = (a + d - b).max(0.0) + rng.random_range(0.0..2.0);
                        pairs.push((i, j, [a, b, c, d]));
                    }
                }
            }
            let mut en = BinaryEnergy::new(n);
            for (v, &(c0, c1)) in unary.iter().enumerate() {
                en.add_unary(v, c0, c1);
            }
            for &(i, j, [a, b, c, d]) in &pairs {
                en.add_pairwise(i, j, a, b, c, d).unwrap();
            }
            let x = en.solve();
            let mut got = 0.0;
            for (v, &(c0, c1)) in unary.iter().enumerate() {
                got += if x[v] { c1 } else { c0 };
            }
            for &(i, j, t) in &pairs {
                got += t[usize::from(x[i]) * 2 + usize::from(x[j])];
            }
            let (want, _) = brute_force_min(n, &unary, &pairs);
            assert!(
                (got - want).abs() < 1e-9,
                "round {round}: cut energy {got} vs brute force {want}"
            );
        }
    }

    #[test]
    fn infinite_entries_act_as_hard_constraints() {
        // theta(1,0) infinite forces x_0=1 => x_1=1; biasing x_0 to 1 and
        // x_1 to 0 must still respect the implication.
        let mut en = BinaryEnergy::new(2);
        en.add_unary(0, 1.0, 0.0);
        en.add_unary(1, 0.0, 0.4);
        en.add_pairwise(0, 1, 0.0, 0.0, f64::INFINITY, 0.0).unwrap();
        let x = en.solve();
        assert_eq!(x, vec![true, true]);

        // Equality constraint: both off-diagonals infinite.
        let mut en = BinaryEnergy::new(2);
        en.add_unary(0, 0.8, 0.0);
        en.add_unary(1, 0.0, 0.3);
        en.add_pairwise(0, 1, 0.0, f64::INFINITY, f64::INFINITY, 0.0)
            .unwrap();
        let x = en.solve();
        assert_eq!(x[0], x[1]);
        // Joint cost at (1,1) is 0.3, at (0,0) is 0.8: picks (1,1).
        assert!(x[0]);
    }

    #[test]
    fn nonsubmodular_tables_are_rejected() {
        let mut en = BinaryEnergy::<f64>::new(2);
        assert!(en.add_pairwise(0, 1, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn freezing_via_infinite_unary_pins_the_variable() {
        let mut en = BinaryEnergy::new(2);
        // Freeze x_0 = 1 even though a pairwise term prefers otherwise.
        en.add_unary(0, f64::INFINITY, 0.0);
        en.add_pairwise(0, 1, 0.0, 2.0, 1.0, 3.0).unwrap();
        let x = en.solve();
        assert!(x[0]);
        // Given x_0 = 1, x_1 = 0 costs 1.0 < 3.0.
        assert!(!x[1]);
    }
}
