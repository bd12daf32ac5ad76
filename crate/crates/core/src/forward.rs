//! Controlled forward system on the scenario tree.
//!
//! One step of the drift-implicit Euler–Maruyama scheme reads
//!
//! ```text
//! (I - dt (D_h² + a1)) y_{k+1} = y_k + dt χ_ω u_k + (a2 y_k + v_k) ΔB
//! ```
//!
//! with coefficients and controls taken at the parent node.

use rand::Rng;
use rayon::prelude::*;

use crate::calc::{max_abs, ImplicitOperator};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Region};
use crate::scalar::Real;
use crate::tree::{AdaptedField, LeafField, ScenarioTree};

/// A coefficient sampled per time level, or per node for adapted coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientField<T> {
    PerLevel(Vec<Vec<T>>),
    PerNode(AdaptedField<T>),
}

impl<T: Real> CoefficientField<T> {
    #[inline]
    pub fn at(&self, level: usize, node: usize) -> &[T] {
        match self {
            CoefficientField::PerLevel(levels) => &levels[level],
            CoefficientField::PerNode(field) => field.node(level, node),
        }
    }

    pub fn sup_norm(&self) -> T {
        match self {
            CoefficientField::PerLevel(levels) => {
                levels.iter().fold(T::zero(), |m, l| m.max(max_abs(l)))
            }
            CoefficientField::PerNode(field) => field.max_abs(),
        }
    }

    fn check_shape(&self, mesh: &Mesh, tree: &ScenarioTree<T>, name: &str) -> Result<()> {
        let ok = match self {
            CoefficientField::PerLevel(levels) => {
                levels.len() >= tree.depth() && levels.iter().all(|l| l.len() == mesh.n())
            }
            CoefficientField::PerNode(field) => {
                field.level_count() >= tree.depth() && field.n() == mesh.n()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "coefficient {name} does not match mesh N = {} and depth {}",
                mesh.n(),
                tree.depth()
            )))
        }
    }
}

/// Zeroth-order coefficients `a1` (drift) and `a2` (diffusion).
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients<T> {
    pub a1: CoefficientField<T>,
    pub a2: CoefficientField<T>,
}

impl<T: Real> Coefficients<T> {
    pub fn zero(mesh: &Mesh, tree: &ScenarioTree<T>) -> Self {
        Self::constant(mesh, tree, T::zero(), T::zero())
    }

    pub fn constant(mesh: &Mesh, tree: &ScenarioTree<T>, a1: T, a2: T) -> Self {
        Self::from_functions(mesh, tree, |_, _| a1, |_, _| a2)
    }

    /// Deterministic coefficients `a(x, t)` sampled at the left end of each step.
    pub fn from_functions(
        mesh: &Mesh,
        tree: &ScenarioTree<T>,
        a1: impl Fn(T, T) -> T,
        a2: impl Fn(T, T) -> T,
    ) -> Self {
        let xs = mesh.interior_coords::<T>();
        let sample = |f: &dyn Fn(T, T) -> T| {
            (0..tree.depth())
                .map(|k| {
                    let t = tree.time(k);
                    xs.iter().map(|&x| f(x, t)).collect()
                })
                .collect()
        };
        Self {
            a1: CoefficientField::PerLevel(sample(&a1)),
            a2: CoefficientField::PerLevel(sample(&a2)),
        }
    }

    /// Adapted coefficients drawn uniformly from `[-bound, bound]` node by node.
    pub fn adapted_random(
        mesh: &Mesh,
        tree: &ScenarioTree<T>,
        bound1: T,
        bound2: T,
        rng: &mut impl Rng,
    ) -> Self {
        let mut draw = |bound: T| {
            let b = bound.to_f64_lossy();
            AdaptedField::from_fn(mesh.n(), tree.depth(), |_, _, out| {
                for v in out {
                    *v = if b > 0.0 {
                        T::lit(rng.gen_range(-b..=b))
                    } else {
                        T::zero()
                    };
                }
            })
        };
        let a1 = draw(bound1);
        let a2 = draw(bound2);
        Self {
            a1: CoefficientField::PerNode(a1),
            a2: CoefficientField::PerNode(a2),
        }
    }

    /// `A = |a1|∞ + |a2|∞`.
    pub fn sup_norm(&self) -> T {
        self.a1.sup_norm() + self.a2.sup_norm()
    }

    /// Shape check plus `dt · max|a1| < 1`, which keeps the implicit matrix
    /// strictly diagonally dominant.
    pub fn validate(&self, mesh: &Mesh, tree: &ScenarioTree<T>) -> Result<()> {
        self.a1.check_shape(mesh, tree, "a1")?;
        self.a2.check_shape(mesh, tree, "a2")?;
        let dominance = tree.dt() * self.a1.sup_norm();
        if !(dominance < T::one()) {
            return Err(Error::invalid(format!(
                "dt * max|a1| = {dominance} must be < 1 for diagonal dominance"
            )));
        }
        Ok(())
    }

    pub fn operator(
        &self,
        mesh: &Mesh,
        dt: T,
        level: usize,
        node: usize,
    ) -> Result<ImplicitOperator<T>> {
        ImplicitOperator::new(mesh, dt, self.a1.at(level, node))
    }
}

/// Drift control `u` localized to `ω` and diffusion control `v` on all of `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPair<T> {
    u: AdaptedField<T>,
    v: AdaptedField<T>,
    region: Region,
}

impl<T: Real> ControlPair<T> {
    /// `u` is zeroed outside the region at every node.
    pub fn new(mut u: AdaptedField<T>, v: AdaptedField<T>, region: Region) -> Result<Self> {
        if u.n() != region.len() || v.n() != region.len() {
            return Err(Error::invalid(
                "control fields do not match the region size",
            ));
        }
        if u.level_count() != v.level_count() {
            return Err(Error::invalid("controls u and v cover different levels"));
        }
        for k in 0..u.level_count() {
            for chunk in u.level_mut(k).chunks_mut(region.len()) {
                region.restrict(chunk);
            }
        }
        Ok(Self { u, v, region })
    }

    pub fn zero(mesh: &Mesh, tree: &ScenarioTree<T>, region: Region) -> Self {
        Self {
            u: AdaptedField::stepping(tree, mesh),
            v: AdaptedField::stepping(tree, mesh),
            region,
        }
    }

    pub fn u(&self) -> &AdaptedField<T> {
        &self.u
    }

    pub fn v(&self) -> &AdaptedField<T> {
        &self.v
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// `Σ dt E|v|² + Σ dt E|u|²` over the control horizon.
    pub fn cost(&self, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        self.v.time_inner(&self.v, None, mesh, tree)
            + self
                .u
                .time_inner(&self.u, Some(self.region.mask()), mesh, tree)
    }
}

/// Right-hand side of one forward step before the implicit solve.
#[inline]
#[allow(clippy::too_many_arguments)]
fn forward_rhs<T: Real>(
    y: &[T],
    u: Option<&[T]>,
    v: Option<&[T]>,
    a2: &[T],
    region: Option<&Region>,
    dt: T,
    increment: T,
    out: &mut [T],
) {
    for i in 0..y.len() {
        let mut noise = a2[i] * y[i];
        if let Some(v) = v {
            noise = noise + v[i];
        }
        let mut drift = T::zero();
        if let (Some(u), Some(region)) = (u, region) {
            drift = dt * region.indicator::<T>(i) * u[i];
        }
        out[i] = y[i] + drift + noise * increment;
    }
}

/// One drift-implicit step from a parent state into one child.
#[allow(clippy::too_many_arguments)]
pub fn forward_step<T: Real>(
    mesh: &Mesh,
    dt: T,
    y: &[T],
    u: &[T],
    v: &[T],
    a1: &[T],
    a2: &[T],
    region: &Region,
    increment: T,
) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); y.len()];
    forward_rhs(
        y,
        Some(u),
        Some(v),
        a2,
        Some(region),
        dt,
        increment,
        &mut out,
    );
    ImplicitOperator::new(mesh, dt, a1)?.solve_in_place(&mut out)?;
    Ok(out)
}

/// State at every tree node.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSolution<T> {
    pub y: AdaptedField<T>,
}

impl<T: Real> ForwardSolution<T> {
    pub fn terminal(&self) -> LeafField<T> {
        let depth = self.y.level_count() - 1;
        LeafField::from_raw(self.y.n(), self.y.level(depth).to_vec())
    }

    /// `E‖y(t_k)‖²` for each level.
    pub fn energy_profile(&self, mesh: &Mesh, tree: &ScenarioTree<T>) -> Vec<T> {
        (0..self.y.level_count())
            .map(|k| self.y.level_inner(&self.y, k, mesh, tree))
            .collect()
    }
}

/// Largest per-step growth rate `ln(E_{k+1}/E_k)/dt` of an energy profile.
pub fn energy_growth_rate<T: Real>(profile: &[T], dt: T) -> T {
    profile
        .windows(2)
        .filter(|w| w[0] > T::zero())
        .map(|w| (w[1] / w[0]).ln() / dt)
        .fold(T::neg_infinity(), T::max)
}

/// Runs the forward system from deterministic `y0` with optional controls.
pub fn solve_forward<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    coeffs: &Coefficients<T>,
    y0: &[T],
    controls: Option<&ControlPair<T>>,
) -> Result<ForwardSolution<T>> {
    let n = mesh.n();
    if y0.len() != n {
        return Err(Error::invalid(format!(
            "y0 has {} values, expected {n}",
            y0.len()
        )));
    }
    coeffs.validate(mesh, tree)?;
    if let Some(c) = controls {
        if c.u.level_count() < tree.depth() || c.u.n() != n {
            return Err(Error::invalid("controls do not cover every time step"));
        }
    }
    let dt = tree.dt();
    let mut y = AdaptedField::full(tree, mesh);
    y.level_mut(0).copy_from_slice(y0);

    for k in 0..tree.depth() {
        let (parent_level, child_level) = y.level_pair_mut(k);
        let parent_level: &[T] = parent_level;
        child_level
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(child, out)| -> Result<()> {
                let parent = child / 2;
                let yk = &parent_level[parent * n..(parent + 1) * n];
                let (u, v, region) = match controls {
                    Some(c) => (
                        Some(c.u.node(k, parent)),
                        Some(c.v.node(k, parent)),
                        Some(&c.region),
                    ),
                    None => (None, None, None),
                };
                forward_rhs(
                    yk,
                    u,
                    v,
                    coeffs.a2.at(k, parent),
                    region,
                    dt,
                    tree.increment(child),
                    out,
                );
                coeffs.operator(mesh, dt, k, parent)?.solve_in_place(out)
            })?;
    }
    Ok(ForwardSolution { y })
}
