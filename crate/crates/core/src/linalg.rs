//! Symmetric positive definite sparse systems in envelope (skyline) storage.
//!
//! Unknowns are renumbered with reverse Cuthill-McKee so the envelope stays
//! narrow for FEM-style adjacency. Callers index with their own numbering;
//! the permutation is applied internally.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Reverse Cuthill-McKee ordering. Returns `order[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Envelope layout of a symmetric matrix after fill-reducing renumbering.
#[derive(Debug, Clone)]
pub struct SkylineLayout {
    n: usize,
    to_new: Vec<usize>,
    to_old: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
}

impl SkylineLayout {
    /// Builds the layout from the off-diagonal adjacency of the unknowns.
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let to_old = reverse_cuthill_mckee(adjacency);
        let mut to_new = vec![0; n];
        for (new, &old) in to_old.iter().enumerate() {
            to_new[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nbrs) in adjacency.iter().enumerate() {
            let i = to_new[old];
            for &w in nbrs {
                let j = to_new[w];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut offset = 0;
        for i in 0..n {
            start.push(offset);
            offset += i - first[i] + 1;
        }
        start.push(offset);
        Self {
            n,
            to_new,
            to_old,
            first,
            start,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored lower-triangle entries.
    pub fn stored(&self) -> usize {
        self.start[self.n]
    }

    #[inline]
    fn slot(&self, old_i: usize, old_j: usize) -> Option<usize> {
        let (mut i, mut j) = (self.to_new[old_i], self.to_new[old_j]);
        if j > i {
            std::mem::swap(&mut i, &mut j);
        }
        if j < self.first[i] {
            return None;
        }
        Some(self.start[i] + (j - self.first[i]))
    }
}

/// Symmetric matrix stored over a [`SkylineLayout`].
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    layout: Arc<SkylineLayout>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    pub fn zeros(layout: Arc<SkylineLayout>) -> Self {
        let values = vec![0.0; layout.stored()];
        Self { layout, values }
    }

    pub fn layout(&self) -> &Arc<SkylineLayout> {
        &self.layout
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `value` to entry (i, j). Only one triangle needs to be visited:
    /// callers adding a full symmetric block should skip `j > i`.
    ///
    /// Panics if (i, j) lies outside the envelope, which means the adjacency
    /// used to build the layout was incomplete.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let slot = self
            .layout
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside skyline envelope"));
        self.values[slot] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.layout.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut y = vec![0.0; l.n];
        for i in 0..l.n {
            let oi = l.to_old[i];
            for j in l.first[i]..=i {
                let a = self.values[l.start[i] + j - l.first[i]];
                if a == 0.0 {
                    continue;
                }
                let oj = l.to_old[j];
                y[oi] += a * x[oj];
                if i != j {
                    y[oj] += a * x[oi];
                }
            }
        }
        y
    }

    /// Cholesky factorization `A = L Lᵀ` inside the envelope.
    pub fn factor(&self) -> Result<SkylineCholesky> {
        let l = &self.layout;
        let mut v = self.values.clone();
        for i in 0..l.n {
            let fi = l.first[i];
            let si = l.start[i];
            for j in fi..i {
                let fj = l.first[j];
                let sj = l.start[j];
                let k0 = fi.max(fj);
                let mut s = v[si + j - fi];
                let ri = &v[si + k0 - fi..si + j - fi];
                let rj = &v[sj + k0 - fj..sj + j - fj];
                s -= dot(ri, rj);
                let djj = v[sj + j - fj];
                v[si + j - fi] = s / djj;
            }
            let row = &v[si..si + i - fi];
            let d = v[si + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: l.to_old[i],
                    value: d,
                });
            }
            v[si + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky {
            layout: Arc::clone(&self.layout),
            values: v,
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Envelope Cholesky factor.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    layout: Arc<SkylineLayout>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.layout.n
    }

    /// Solves `A x = b` with `b` in caller numbering.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        assert_eq!(b.len(), l.n, "rhs dimension");
        let mut y: Vec<f64> = l.to_old.iter().map(|&o| b[o]).collect();
        // forward: L y = b
        for i in 0..l.n {
            let fi = l.first[i];
            let si = l.start[i];
            let s = dot(&self.values[si..si + i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / self.values[si + i - fi];
        }
        // backward: Lᵀ x = y
        for i in (0..l.n).rev() {
            let fi = l.first[i];
            let si = l.start[i];
            y[i] /= self.values[si + i - fi];
            let yi = y[i];
            for j in fi..i {
                y[j] -= self.values[si + j - fi] * yi;
            }
        }
        let mut x = vec![0.0; l.n];
        for (new, &old) in l.to_old.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_adjacency(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect()
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![3], vec![2, 4], vec![1], vec![0], vec![1], vec![]];
        let mut order = reverse_cuthill_mckee(&adj);
        order.sort();
        assert_eq!(order, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let n = 12;
        let adj = path_adjacency(n);
        let layout = Arc::new(SkylineLayout::new(&adj));
        let mut a = SkylineMatrix::zeros(layout);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a.add(i, i, 4.0);
            dense[(i, i)] = 4.0;
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
                dense[(i + 1, i)] = -1.0;
                dense[(i, i + 1)] = -1.0;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.factor().unwrap().solve(&b);
        let expect = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn random_sparse_spd_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut adj = vec![Vec::new(); n];
        let mut entries = Vec::new();
        for _ in 0..80 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
                entries.push((i, j, rng.gen_range(-1.0..1.0)));
            }
        }
        let layout = Arc::new(SkylineLayout::new(&adj));
        let mut a = SkylineMatrix::zeros(layout);
        let mut rowsum = vec![0.0; n];
        for &(i, j, v) in &entries {
            a.add(i, j, v);
            rowsum[i] += f64::abs(v);
            rowsum[j] += f64::abs(v);
        }
        for i in 0..n {
            a.add(i, i, rowsum[i] + 1.0);
        }
        let x0: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 1.0).collect();
        let b = a.mul_vec(&x0);
        let x = a.factor().unwrap().solve(&b);
        for i in 0..n {
            assert!((x[i] - x0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let adj = path_adjacency(3);
        let mut a = SkylineMatrix::zeros(Arc::new(SkylineLayout::new(&adj)));
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(matches!(a.factor(), Err(Error::NotPositiveDefinite { .. })));
    }
}
