//! Binary scenario tree as an exact finite model of a Brownian filtration.
//!
//! Level `k` holds `2^k` nodes, each with probability `2^{-k}`. Node `n` at
//! level `k` has children `2n` (increment `+sqrt(dt)`) and `2n + 1`
//! (increment `-sqrt(dt)`) at level `k + 1`. Conditional expectations are
//! averages over the two children, so `E[ΔB] = 0` and `ΔB² = dt` hold exactly.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::Real;

pub const DEFAULT_DEPTH_CAP: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree<T> {
    depth: usize,
    t_final: T,
    dt: T,
    sqrt_dt: T,
}

impl<T: Real> ScenarioTree<T> {
    pub fn new(depth: usize, t_final: T) -> Result<Self> {
        Self::with_cap(depth, t_final, DEFAULT_DEPTH_CAP)
    }

    pub fn with_cap(depth: usize, t_final: T, cap: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("tree depth must be at least 1"));
        }
        if depth > cap {
            return Err(Error::ResourceLimit(format!(
                "tree depth {depth} exceeds cap {cap} ({} leaves)",
                1u128 << depth.min(127)
            )));
        }
        if !(t_final > T::zero()) {
            return Err(Error::invalid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        let dt = t_final / T::from_usize_lossy(depth);
        Ok(Self {
            depth,
            t_final,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn time(&self, level: usize) -> T {
        T::from_usize_lossy(level) * self.dt
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1usize << level
    }

    pub fn leaves(&self) -> usize {
        self.nodes_at(self.depth)
    }

    pub fn probability(&self, level: usize) -> T {
        T::lit(0.5).powi(level as i32)
    }

    /// Brownian increment on the edge into `child` (even: up, odd: down).
    #[inline]
    pub fn increment(&self, child: usize) -> T {
        if child.is_multiple_of(2) {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Path value `B(t_k)` at a node.
    pub fn brownian(&self, level: usize, node: usize) -> T {
        (0..level).fold(T::zero(), |b, j| {
            let child = node >> (level - 1 - j);
            b + self.increment(child)
        })
    }

    /// Exact `E[φ]` over level `k`, summed in node order.
    pub fn expectation(&self, level: usize, phi: impl Fn(usize) -> T) -> T {
        let sum: T = (0..self.nodes_at(level)).map(phi).sum();
        sum * self.probability(level)
    }

    /// Conditional mean and martingale coefficient of a value known at the
    /// two children: `child = mean + Z ΔB` holds for both.
    #[inline]
    pub fn martingale_coeff(&self, up: T, down: T) -> (T, T) {
        martingale_coeff(up, down, self.sqrt_dt)
    }
}

/// `((z₊ + z₋)/2, (z₊ - z₋)/(2 sqrt(dt)))`.
#[inline]
pub fn martingale_coeff<T: Real>(up: T, down: T, sqrt_dt: T) -> (T, T) {
    let half = T::lit(0.5);
    ((up + down) * half, (up - down) * half / sqrt_dt)
}

/// One interior grid function per tree node, stored level by level.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedField<T> {
    n: usize,
    levels: Vec<Vec<T>>,
}

impl<T: Real> AdaptedField<T> {
    /// Zero field on levels `0..level_count`.
    pub fn zeros(n: usize, level_count: usize) -> Self {
        Self {
            n,
            levels: (0..level_count).map(|k| vec![T::zero(); n << k]).collect(),
        }
    }

    /// Zero field on every level `0..=depth` of the tree.
    pub fn full(tree: &ScenarioTree<T>, mesh: &Mesh) -> Self {
        Self::zeros(mesh.n(), tree.depth() + 1)
    }

    /// Zero field on the time-stepping levels `0..depth` (controls, sources, `Z`).
    pub fn stepping(tree: &ScenarioTree<T>, mesh: &Mesh) -> Self {
        Self::zeros(mesh.n(), tree.depth())
    }

    /// Builds a field nodewise; `gen(level, node, out)` fills one node.
    pub fn from_fn(
        n: usize,
        level_count: usize,
        mut gen: impl FnMut(usize, usize, &mut [T]),
    ) -> Self {
        let mut field = Self::zeros(n, level_count);
        for (k, level) in field.levels.iter_mut().enumerate() {
            for (node, chunk) in level.chunks_mut(n).enumerate() {
                gen(k, node, chunk);
            }
        }
        field
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn total_len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn level(&self, k: usize) -> &[T] {
        &self.levels[k]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.levels[k]
    }

    /// Mutable access to two consecutive levels `k` and `k + 1`.
    pub fn level_pair_mut(&mut self, k: usize) -> (&mut [T], &mut [T]) {
        let (lo, hi) = self.levels.split_at_mut(k + 1);
        (&mut lo[k], &mut hi[0])
    }

    pub fn node(&self, k: usize, node: usize) -> &[T] {
        &self.levels[k][node * self.n..(node + 1) * self.n]
    }

    pub fn node_mut(&mut self, k: usize, node: usize) -> &mut [T] {
        let n = self.n;
        &mut self.levels[k][node * n..(node + 1) * n]
    }

    pub fn scale(&mut self, a: T) {
        for level in &mut self.levels {
            level.iter_mut().for_each(|v| *v = *v * a);
        }
    }

    pub fn axpy(&mut self, a: T, other: &Self) {
        for (l, o) in self.levels.iter_mut().zip(&other.levels) {
            l.iter_mut().zip(o).for_each(|(v, &w)| *v = *v + a * w);
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.levels
            .iter()
            .flat_map(|l| l.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// `E ⟨a, b⟩_M` at level `k`.
    pub fn level_inner(&self, other: &Self, k: usize, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        tree.expectation(k, |node| {
            mesh.inner(self.node(k, node), other.node(k, node))
        })
    }

    /// `Σ_k dt E ⟨a, b⟩_M` over the stored stepping levels, with an optional
    /// spatial mask applied to both factors.
    pub fn time_inner(
        &self,
        other: &Self,
        mask: Option<&[bool]>,
        mesh: &Mesh,
        tree: &ScenarioTree<T>,
    ) -> T {
        let h = mesh.h::<T>();
        let levels = self
            .level_count()
            .min(other.level_count())
            .min(tree.depth());
        let mut total = T::zero();
        for k in 0..levels {
            let e = tree.expectation(k, |node| {
                let a = self.node(k, node);
                let b = other.node(k, node);
                let s: T = match mask {
                    Some(m) => a
                        .iter()
                        .zip(b)
                        .zip(m)
                        .filter(|(_, &keep)| keep)
                        .map(|((&x, &y), _)| x * y)
                        .sum(),
                    None => a.iter().zip(b).map(|(&x, &y)| x * y).sum(),
                };
                h * s
            });
            total = total + tree.dt() * e;
        }
        total
    }
}

/// Terminal data indexed by leaf: `2^depth` interior grid functions.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafField<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Real> LeafField<T> {
    pub fn zeros(tree: &ScenarioTree<T>, mesh: &Mesh) -> Self {
        Self {
            n: mesh.n(),
            values: vec![T::zero(); tree.leaves() * mesh.n()],
        }
    }

    pub(crate) fn from_raw(n: usize, values: Vec<T>) -> Self {
        Self { n, values }
    }

    pub fn from_vec(tree: &ScenarioTree<T>, mesh: &Mesh, values: Vec<T>) -> Result<Self> {
        if values.len() != tree.leaves() * mesh.n() {
            return Err(Error::invalid(format!(
                "leaf field needs {} values, got {}",
                tree.leaves() * mesh.n(),
                values.len()
            )));
        }
        Ok(Self {
            n: mesh.n(),
            values,
        })
    }

    /// Same grid function on every leaf.
    pub fn deterministic(tree: &ScenarioTree<T>, values: &[T]) -> Self {
        let mut v = Vec::with_capacity(values.len() * tree.leaves());
        for _ in 0..tree.leaves() {
            v.extend_from_slice(values);
        }
        Self {
            n: values.len(),
            values: v,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn leaf(&self, leaf: usize) -> &[T] {
        &self.values[leaf * self.n..(leaf + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `E ⟨a, b⟩_M` over the leaves.
    pub fn inner(&self, other: &Self, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        let h = mesh.h::<T>();
        let s: T = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum();
        h * s * tree.probability(tree.depth())
    }

    pub fn norm_sq(&self, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        self.inner(self, mesh, tree)
    }

    pub fn axpy(&mut self, a: T, other: &Self) {
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(v, &w)| *v = *v + a * w);
    }

    pub fn scale(&mut self, a: T) {
        self.values.iter_mut().for_each(|v| *v = *v * a);
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_tree_examples() {
        let t = ScenarioTree::new(1, 1.0_f64).unwrap();
        assert_eq!(t.leaves(), 2);
        assert_eq!(t.increment(0), 1.0);
        assert_eq!(t.increment(1), -1.0);
        assert_eq!(t.probability(1), 0.5);

        let t = ScenarioTree::new(3, 1.0_f64).unwrap();
        assert_eq!(t.leaves(), 8);
        assert_eq!(t.probability(3), 0.125);
        assert!((t.dt() - 1.0 / 3.0).abs() < 1e-16);

        assert!(matches!(
            ScenarioTree::new(17, 1.0_f64),
            Err(Error::ResourceLimit(_))
        ));
        assert!(ScenarioTree::with_cap(17, 1.0_f64, 17).is_ok());
        assert!(ScenarioTree::new(0, 1.0_f64).is_err());
    }

    #[test]
    fn expectation_examples() {
        let t = ScenarioTree::new(4, 1.0_f64).unwrap();
        assert_eq!(t.expectation(3, |_| 2.5), 2.5);
        let t1 = ScenarioTree::new(1, 1.0_f64).unwrap();
        assert_eq!(t1.expectation(1, |n| if n == 0 { 1.0 } else { 0.0 }), 0.5);
        for k in 1..=4 {
            assert_eq!(t.expectation(k, |n| t.increment(n)), 0.0);
        }
    }

    #[test]
    fn martingale_coeff_examples() {
        let (m, z) = martingale_coeff(1.0_f64, 0.0, 0.5);
        assert_eq!((m, z), (0.5, 1.0));
        let (_, z) = martingale_coeff(0.3_f64, 0.3, 0.5);
        assert_eq!(z, 0.0);
        let t = ScenarioTree::new(4, 1.0_f64).unwrap();
        let (up, down) = (0.7, -1.9);
        let (m, z) = t.martingale_coeff(up, down);
        assert!((m + z * t.increment(0) - up).abs() < 1e-15);
        assert!((m + z * t.increment(1) - down).abs() < 1e-15);
    }

    #[test]
    fn brownian_path_value() {
        let t = ScenarioTree::new(4, 1.0_f64).unwrap();
        // node 0b0110 at level 4: +, -, -, +
        assert!(t.brownian(4, 0b0110).abs() < 1e-15);
        assert!((t.brownian(4, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adapted_field_storage() {
        let t = ScenarioTree::new(5, 1.0_f64).unwrap();
        let m = Mesh::new(7).unwrap();
        let f = AdaptedField::full(&t, &m);
        assert_eq!(f.total_len(), 7 * ((1 << 6) - 1));
        assert_eq!(AdaptedField::stepping(&t, &m).level_count(), 5);
    }
}
