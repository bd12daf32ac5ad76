//! Uniform mesh on (0, 1), its dual meshes and discrete integration.
//!
//! Points are stored as integer half-indices: the value `p` stands for the
//! coordinate `p * h / 2`. Primal points have even half-indices, dual points
//! odd ones. Shifting by `±h/2` is `p ± 1`, so the set algebra behind
//! `W' = τ₊W ∩ τ₋W` and `W* = τ₊W ∪ τ₋W` is exact.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A finite set of mesh points in half-index units.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PointSet(BTreeSet<i64>);

impl PointSet {
    pub fn from_half_indices(points: impl IntoIterator<Item = i64>) -> Self {
        Self(points.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: i64) -> bool {
        self.0.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.0.iter().copied()
    }

    pub fn shift_plus(&self) -> Self {
        Self(self.0.iter().map(|p| p + 1).collect())
    }

    pub fn shift_minus(&self) -> Self {
        Self(self.0.iter().map(|p| p - 1).collect())
    }

    /// `W* = τ₊(W) ∪ τ₋(W)`.
    pub fn star(&self) -> Self {
        Self(
            self.shift_plus()
                .0
                .union(&self.shift_minus().0)
                .copied()
                .collect(),
        )
    }

    /// `W' = τ₊(W) ∩ τ₋(W)`.
    pub fn prime(&self) -> Self {
        Self(
            self.shift_plus()
                .0
                .intersection(&self.shift_minus().0)
                .copied()
                .collect(),
        )
    }

    /// `W̄ = (W*)*`.
    pub fn bar(&self) -> Self {
        self.star().star()
    }

    /// `W̊ = (W')'`.
    pub fn ring(&self) -> Self {
        self.prime().prime()
    }

    pub fn difference(&self, other: &Self) -> Self {
        Self(self.0.difference(&other.0).copied().collect())
    }

    /// A mesh is regular when `ring(bar(W)) == W`.
    pub fn is_regular(&self) -> bool {
        self.bar().ring() == *self
    }

    /// `∂W = W̄ \ W`.
    pub fn boundary(&self) -> Self {
        self.bar().difference(self)
    }

    /// Outward normal at a boundary point: `+1` when only the left dual
    /// neighbour lies in `W*`, `-1` when only the right one does.
    pub fn normal(&self, p: i64) -> i8 {
        let star = self.star();
        match (star.contains(p - 1), star.contains(p + 1)) {
            (true, false) => 1,
            (false, true) => -1,
            _ => 0,
        }
    }

    pub fn coordinates<T: Real>(&self, h: T) -> Vec<T> {
        let half = h / T::lit(2.0);
        self.iter()
            .map(|p| T::from_i64(p).unwrap() * half)
            .collect()
    }
}

/// Uniform mesh of `N` interior points on `[0, 1]` with `h = 1/(N+1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mesh {
    n: usize,
}

impl Mesh {
    /// Builds the mesh; at least two interior points are needed so that the
    /// dual-prime mesh is nonempty.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!(
                "mesh needs N >= 2 interior points, got {n}"
            )));
        }
        Ok(Self { n })
    }

    /// Mesh with spacing closest to `h` (`N = round(1/h) - 1`).
    pub fn with_spacing(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::invalid(format!(
                "spacing must lie in (0,1), got {h}"
            )));
        }
        let cells = (1.0 / h).round() as usize;
        Self::new(cells.saturating_sub(1))
    }

    /// Number of interior points.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(self.n + 1)
    }

    /// Coordinate of primal point `i` (`0..=N+1`).
    pub fn x<T: Real>(&self, i: usize) -> T {
        T::from_usize_lossy(i) * self.h::<T>()
    }

    /// Coordinate of star point `j` (`0..=N`), i.e. `x_j + h/2`.
    pub fn x_star<T: Real>(&self, j: usize) -> T {
        (T::from_usize_lossy(j) + T::lit(0.5)) * self.h::<T>()
    }

    pub fn interior_coords<T: Real>(&self) -> Vec<T> {
        (1..=self.n).map(|i| self.x(i)).collect()
    }

    pub fn closure_coords<T: Real>(&self) -> Vec<T> {
        (0..=self.n + 1).map(|i| self.x(i)).collect()
    }

    pub fn star_coords<T: Real>(&self) -> Vec<T> {
        (0..=self.n).map(|j| self.x_star(j)).collect()
    }

    /// Interior set `M` in half-index units.
    pub fn interior(&self) -> PointSet {
        PointSet::from_half_indices((1..=self.n as i64).map(|i| 2 * i))
    }

    /// Closure `K = {x_0, ..., x_{N+1}}`.
    pub fn closure(&self) -> PointSet {
        PointSet::from_half_indices((0..=self.n as i64 + 1).map(|i| 2 * i))
    }

    pub fn dual(&self) -> DualMesh {
        let interior = self.interior();
        DualMesh {
            star: interior.star(),
            prime: interior.prime(),
        }
    }

    /// Boundary samples `{0, 1}` with their outward normals.
    pub fn boundary(&self) -> [BoundarySample; 2] {
        let interior = self.interior();
        let right = 2 * (self.n as i64 + 1);
        [
            BoundarySample {
                half_index: 0,
                normal: interior.normal(0),
            },
            BoundarySample {
                half_index: right,
                normal: interior.normal(right),
            },
        ]
    }

    /// `∫ u` over one part of the mesh: `h Σ u` for point sets, plain `Σ u`
    /// on the boundary.
    pub fn integrate<T: Real>(&self, part: MeshPart, u: &[T]) -> Result<T> {
        let expected = self.part_len(part);
        if u.len() != expected {
            return Err(Error::invalid(format!(
                "integrand on {part:?} has {} values, expected {expected}",
                u.len()
            )));
        }
        let sum: T = u.iter().copied().sum();
        Ok(match part {
            MeshPart::Boundary => sum,
            _ => self.h::<T>() * sum,
        })
    }

    pub fn part_len(&self, part: MeshPart) -> usize {
        match part {
            MeshPart::Interior => self.n,
            MeshPart::Closure => self.n + 2,
            MeshPart::Star => self.n + 1,
            MeshPart::Prime => self.n - 1,
            MeshPart::Boundary => 2,
        }
    }

    /// `⟨u, v⟩_M = h Σ u v` on interior values.
    pub fn inner<T: Real>(&self, u: &[T], v: &[T]) -> T {
        debug_assert_eq!(u.len(), v.len());
        self.h::<T>() * u.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>()
    }

    pub fn norm_sq<T: Real>(&self, u: &[T]) -> T {
        self.inner(u, u)
    }
}

/// The part of the mesh a function lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshPart {
    Interior,
    Closure,
    Star,
    Prime,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualMesh {
    pub star: PointSet,
    pub prime: PointSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundarySample {
    pub half_index: i64,
    pub normal: i8,
}

impl BoundarySample {
    /// Trace of a star-mesh function at this boundary point: the value at the
    /// adjacent dual point on the inner side.
    pub fn trace_of<T: Real>(&self, star_values: &[T]) -> T {
        match self.normal {
            1 => *star_values.last().expect("nonempty star mesh"),
            -1 => star_values[0],
            _ => T::zero(),
        }
    }
}

/// Index set `ω ∩ M` of interior points lying in an open interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    mask: Vec<bool>,
}

impl Region {
    pub fn from_interval(mesh: &Mesh, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::invalid(format!(
                "region ({a}, {b}) must be a nonempty subinterval of (0,1)"
            )));
        }
        let mask: Vec<bool> = (1..=mesh.n())
            .map(|i| {
                let x: f64 = mesh.x(i);
                a < x && x < b
            })
            .collect();
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid(format!(
                "region ({a}, {b}) contains no interior point at h = {}",
                mesh.h::<f64>()
            )));
        }
        Ok(Self { mask })
    }

    /// Every interior point.
    pub fn full(mesh: &Mesh) -> Self {
        Self {
            mask: vec![true; mesh.n()],
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn indicator<T: Real>(&self, i: usize) -> T {
        if self.mask[i] {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Zeroes entries outside the region in place.
    pub fn restrict<T: Real>(&self, u: &mut [T]) {
        for (v, &m) in u.iter_mut().zip(&self.mask) {
            if !m {
                *v = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn build_mesh_examples() {
        let m = Mesh::new(3).unwrap();
        assert_eq!(m.h::<f64>(), 0.25);
        assert!(close(&m.interior_coords(), &[0.25, 0.5, 0.75]));
        assert!(close(&m.closure_coords(), &[0.0, 0.25, 0.5, 0.75, 1.0]));

        let m = Mesh::new(2).unwrap();
        assert!(close(&m.interior_coords(), &[1.0 / 3.0, 2.0 / 3.0]));

        assert!(matches!(Mesh::new(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dual_mesh_examples() {
        let m = Mesh::new(3).unwrap();
        let d = m.dual();
        let h = m.h::<f64>();
        assert!(close(&d.star.coordinates(h), &[0.125, 0.375, 0.625, 0.875]));
        assert!(close(&d.prime.coordinates(h), &[0.375, 0.625]));

        let m = Mesh::new(2).unwrap();
        let d = m.dual();
        let h = m.h::<f64>();
        assert!(close(&d.star.coordinates(h), &[1.0 / 6.0, 0.5, 5.0 / 6.0]));
        assert!(close(&d.prime.coordinates(h), &[0.5]));
    }

    #[test]
    fn cardinalities_and_regularity() {
        for n in 2..40 {
            let m = Mesh::new(n).unwrap();
            let d = m.dual();
            assert_eq!(d.star.len(), n + 1);
            assert_eq!(d.prime.len(), n - 1);
            assert!(d.prime.iter().all(|p| d.star.contains(p)));
            assert!(m.interior().is_regular());
            assert_eq!(m.interior().bar(), m.closure());
            assert_eq!(m.interior().boundary().len(), 2);
            // every star point is the midpoint of two consecutive closure points
            let closure = m.closure();
            assert!(d
                .star
                .iter()
                .all(|p| closure.contains(p - 1) && closure.contains(p + 1)));
        }
    }

    #[test]
    fn boundary_normals() {
        let m = Mesh::new(5).unwrap();
        let [left, right] = m.boundary();
        assert_eq!(left.normal, -1);
        assert_eq!(right.normal, 1);
        let star = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(left.trace_of(&star), 1.0);
        assert_eq!(right.trace_of(&star), 6.0);
    }

    #[test]
    fn irregular_set_detected() {
        // two points with a gap of 2h are not a regular mesh
        let w = PointSet::from_half_indices([2, 6]);
        assert!(!w.is_regular());
    }

    #[test]
    fn integrate_examples() {
        let m = Mesh::new(3).unwrap();
        assert_eq!(m.integrate(MeshPart::Interior, &[1.0; 3]).unwrap(), 0.75);
        assert_eq!(m.integrate(MeshPart::Interior, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(m.integrate(MeshPart::Boundary, &[2.0, 3.0]).unwrap(), 5.0);
        assert!(m.integrate(MeshPart::Star, &[1.0; 3]).is_err());
    }

    #[test]
    fn region_from_interval() {
        let m = Mesh::new(9).unwrap();
        let r = Region::from_interval(&m, 0.25, 0.55).unwrap();
        assert_eq!(r.count(), 3);
        assert!(Region::from_interval(&m, 0.41, 0.49).is_err());
    }

    proptest::proptest! {
        #[test]
        fn integrate_is_linear(
            u in proptest::collection::vec(-10.0f64..10.0, 12),
            v in proptest::collection::vec(-10.0f64..10.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let m = Mesh::new(12).unwrap();
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.integrate(MeshPart::Interior, &w).unwrap();
            let rhs = a * m.integrate(MeshPart::Interior, &u).unwrap()
                + b * m.integrate(MeshPart::Interior, &v).unwrap();
            let scale = 1.0 + m.integrate(MeshPart::Interior, &w.iter().map(|x| x.abs()).collect::<Vec<_>>()).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-14 * scale);
        }
    }
}
