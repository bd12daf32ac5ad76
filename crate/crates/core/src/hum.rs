//! Penalized HUM control synthesis.
//!
//! The controllability Gramian `Λ z_T = y(T; 0, χ_ω ζ, Z)` is symmetric and
//! positive semidefinite in `E⟨·,·⟩_M` on the leaves. Minimizing
//!
//! ```text
//! J(z_T) = ½ Σ dt E‖Z‖² + ½ Σ dt E‖χ_ω ζ‖² + ε/2 E‖z_T‖² - ⟨y0, z(0)⟩
//! ```
//!
//! is the linear system `(Λ + εI) z_T = y_free(T)`, solved here by
//! matrix-free conjugate gradients. With `u* = -χ_ω ζ*`, `v* = -Z*` the
//! controlled terminal state is `y(T) = ε z_T*`.

use crate::backward::{solve_backward, BackwardSolution};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, Coefficients, ControlPair, ForwardSolution};
use crate::mesh::{Mesh, Region};
use crate::scalar::Real;
use crate::tree::{LeafField, ScenarioTree};

/// How the penalty `ε` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty<T> {
    Direct(T),
    /// `ε = exp(-c / h)`.
    Exponential(T),
}

impl<T: Real> Penalty<T> {
    pub fn value(&self, h: T) -> T {
        match *self {
            Penalty::Direct(eps) => eps,
            Penalty::Exponential(c) => (-c / h).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HumProblem<T> {
    pub mesh: Mesh,
    pub tree: ScenarioTree<T>,
    pub coeffs: Coefficients<T>,
    pub y0: Vec<T>,
    pub region: Region,
    pub epsilon: T,
    pub cg_tol: T,
    pub cg_maxiter: usize,
}

impl<T: Real> HumProblem<T> {
    pub fn new(
        mesh: Mesh,
        tree: ScenarioTree<T>,
        coeffs: Coefficients<T>,
        y0: Vec<T>,
        region: Region,
        penalty: Penalty<T>,
    ) -> Result<Self> {
        let epsilon = penalty.value(mesh.h());
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "penalty must be positive and finite, got {epsilon}"
            )));
        }
        if region.len() != mesh.n() || region.count() == 0 {
            return Err(Error::invalid("control region must meet the interior mesh"));
        }
        if y0.len() != mesh.n() {
            return Err(Error::invalid(format!(
                "y0 has {} values, expected {}",
                y0.len(),
                mesh.n()
            )));
        }
        coeffs.validate(&mesh, &tree)?;
        Ok(Self {
            mesh,
            tree,
            coeffs,
            y0,
            region,
            epsilon,
            cg_tol: T::lit(1e-10),
            cg_maxiter: 500,
        })
    }

    pub fn with_cg(mut self, tol: T, maxiter: usize) -> Self {
        self.cg_tol = tol;
        self.cg_maxiter = maxiter;
        self
    }

    pub fn inner(&self, a: &LeafField<T>, b: &LeafField<T>) -> T {
        a.inner(b, &self.mesh, &self.tree)
    }

    fn backward(&self, z_t: &LeafField<T>) -> Result<BackwardSolution<T>> {
        solve_backward(&self.mesh, &self.tree, &self.coeffs, z_t)
    }

    fn forward(&self, y0: &[T], controls: Option<&ControlPair<T>>) -> Result<ForwardSolution<T>> {
        solve_forward(&self.mesh, &self.tree, &self.coeffs, y0, controls)
    }

    /// `y(T)` from `y0` with zero controls.
    pub fn free_terminal(&self) -> Result<LeafField<T>> {
        Ok(self.forward(&self.y0, None)?.terminal())
    }

    /// `z_T ↦ y(T; 0, χ_ω ζ, Z)`.
    pub fn gramian_apply(&self, z_t: &LeafField<T>) -> Result<LeafField<T>> {
        let back = self.backward(z_t)?;
        let controls = back.induced_controls(&self.region, T::one())?;
        let zero = vec![T::zero(); self.mesh.n()];
        Ok(self.forward(&zero, Some(&controls))?.terminal())
    }

    /// `J(z_T)`.
    pub fn objective(&self, z_t: &LeafField<T>) -> Result<T> {
        let back = self.backward(z_t)?;
        Ok(objective_from(self, z_t, &back))
    }

    /// `∇J(z_T) = ε z_T - y(T; y0, -χ_ω ζ, -Z)`.
    pub fn gradient(&self, z_t: &LeafField<T>) -> Result<LeafField<T>> {
        let back = self.backward(z_t)?;
        let controls = back.induced_controls(&self.region, -T::one())?;
        let y_t = self.forward(&self.y0, Some(&controls))?.terminal();
        let mut g = z_t.scaled(self.epsilon);
        g.axpy(-T::one(), &y_t);
        Ok(g)
    }

    /// Dense `Λ` in the leaf-major basis, row-major with side `N·2^depth`.
    pub fn assemble_dense_gramian(&self) -> Result<Vec<T>> {
        let dim = self.mesh.n() * self.tree.leaves();
        let mut dense = vec![T::zero(); dim * dim];
        let mut basis = LeafField::zeros(&self.tree, &self.mesh);
        for j in 0..dim {
            basis.values_mut()[j] = T::one();
            let column = self.gramian_apply(&basis)?;
            basis.values_mut()[j] = T::zero();
            for (i, &v) in column.values().iter().enumerate() {
                dense[i * dim + j] = v;
            }
        }
        Ok(dense)
    }
}

fn objective_from<T: Real>(
    problem: &HumProblem<T>,
    z_t: &LeafField<T>,
    back: &BackwardSolution<T>,
) -> T {
    let (mesh, tree) = (&problem.mesh, &problem.tree);
    let half = T::lit(0.5);
    half * back.diffusion_energy(mesh, tree)
        + half * back.observed_energy(&problem.region, mesh, tree)
        + half * problem.epsilon * z_t.norm_sq(mesh, tree)
        - mesh.inner(&problem.y0, back.z0())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome<T> {
    pub solution: LeafField<T>,
    pub iterations: usize,
    /// Relative residuals `‖r_k‖ / ‖b‖`, starting with the initial one.
    pub history: Vec<T>,
}

/// Conjugate gradients for `(Λ + εI) x = b` in the tree-weighted inner product,
/// from `x = 0`, stopping at `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient<T: Real>(
    problem: &HumProblem<T>,
    b: &LeafField<T>,
) -> Result<CgOutcome<T>> {
    let apply = |x: &LeafField<T>| -> Result<LeafField<T>> {
        let mut out = problem.gramian_apply(x)?;
        out.axpy(problem.epsilon, x);
        Ok(out)
    };
    let b_norm = problem.inner(b, b).sqrt();
    let mut x = LeafField::zeros(&problem.tree, &problem.mesh);
    if b_norm == T::zero() {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            history: vec![T::zero()],
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = problem.inner(&r, &r);
    let mut history = vec![rr.sqrt() / b_norm];
    for iteration in 1..=problem.cg_maxiter {
        let ap = apply(&p)?;
        let curvature = problem.inner(&p, &ap);
        if !(curvature > T::zero()) {
            return Err(Error::Convergence {
                tol: problem.cg_tol.to_f64_lossy(),
                iterations: iteration,
                last: history.last().map_or(f64::NAN, |v| v.to_f64_lossy()),
                history: history.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_next = problem.inner(&r, &r);
        history.push(rr_next.sqrt() / b_norm);
        if rr_next.sqrt() <= problem.cg_tol * b_norm {
            return Ok(CgOutcome {
                solution: x,
                iterations: iteration,
                history,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        let mut next = r.clone();
        next.axpy(beta, &p);
        p = next;
    }
    Err(Error::Convergence {
        tol: problem.cg_tol.to_f64_lossy(),
        iterations: problem.cg_maxiter,
        last: history.last().map_or(f64::NAN, |v| v.to_f64_lossy()),
        history: history.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HumSolution<T> {
    pub z_t_star: LeafField<T>,
    pub adjoint: BackwardSolution<T>,
    /// `u* = -χ_ω ζ*`, `v* = -Z*`.
    pub controls: ControlPair<T>,
    pub state: ForwardSolution<T>,
    pub y_t: LeafField<T>,
    pub objective: T,
    pub epsilon: T,
    pub cg_iterations: usize,
    pub residual_history: Vec<T>,
    /// `sqrt(E‖y(T) - ε z_T*‖²)`.
    pub closure_error: T,
    /// `sqrt(E‖y_free(T)‖²)`.
    pub rhs_norm: T,
}

impl<T: Real> HumSolution<T> {
    /// Last relative CG residual.
    pub fn cg_residual(&self) -> T {
        self.residual_history
            .last()
            .copied()
            .unwrap_or_else(T::zero)
    }

    /// `closure_error / (cg_residual · ‖b‖)`; zero when both vanish.
    pub fn closure_ratio(&self) -> T {
        let scale = self.cg_residual() * self.rhs_norm;
        if scale > T::zero() {
            self.closure_error / scale
        } else if self.closure_error == T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    }
}

pub fn solve_hum<T: Real>(problem: &HumProblem<T>) -> Result<HumSolution<T>> {
    let (mesh, tree) = (&problem.mesh, &problem.tree);
    let b = problem.free_terminal()?;
    let rhs_norm = b.norm_sq(mesh, tree).sqrt();
    let cg = conjugate_gradient(problem, &b)?;
    let z_t_star = cg.solution;
    let adjoint = problem.backward(&z_t_star)?;
    let controls = adjoint.induced_controls(&problem.region, -T::one())?;
    let state = problem.forward(&problem.y0, Some(&controls))?;
    let y_t = state.terminal();
    let mut gap = y_t.clone();
    gap.axpy(-problem.epsilon, &z_t_star);
    let closure_error = gap.norm_sq(mesh, tree).sqrt();
    let objective = objective_from(problem, &z_t_star, &adjoint);
    Ok(HumSolution {
        z_t_star,
        adjoint,
        controls,
        state,
        y_t,
        objective,
        epsilon: problem.epsilon,
        cg_iterations: cg.iterations,
        residual_history: cg.history,
        closure_error,
        rhs_norm,
    })
}

/// Control cost and terminal decay relative to the initial energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HumReport<T> {
    pub initial_energy: T,
    /// `Σ dt E‖v*‖² + Σ dt E‖χ_ω u*‖²`.
    pub cost: T,
    pub cost_ratio: T,
    pub terminal_energy: T,
    /// `E‖y(T)‖² / ‖y0‖²`.
    pub terminal_ratio: T,
    /// `E‖y(T)‖² / (ε ‖y0‖²)`.
    pub terminal_over_eps: T,
}

/// Ratios are zero by convention when `y0 = 0`.
pub fn report_bounds<T: Real>(solution: &HumSolution<T>, problem: &HumProblem<T>) -> HumReport<T> {
    let (mesh, tree) = (&problem.mesh, &problem.tree);
    let initial_energy = mesh.norm_sq(&problem.y0);
    let cost = solution.controls.cost(mesh, tree);
    let terminal_energy = solution.y_t.norm_sq(mesh, tree);
    let ratio = |num: T, den: T| {
        if den > T::zero() {
            num / den
        } else {
            T::zero()
        }
    };
    HumReport {
        initial_energy,
        cost,
        cost_ratio: ratio(cost, initial_energy),
        terminal_energy,
        terminal_ratio: ratio(terminal_energy, initial_energy),
        terminal_over_eps: ratio(terminal_energy, solution.epsilon * initial_energy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, depth: usize, seed: u64, eps: f64) -> HumProblem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(n).unwrap();
        let tree = ScenarioTree::new(depth, 1.0).unwrap();
        let coeffs = Coefficients::adapted_random(&mesh, &tree, 0.5, 0.8, &mut rng);
        let y0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let region = Region::from_interval(&mesh, 0.3, 0.7).unwrap();
        HumProblem::new(mesh, tree, coeffs, y0, region, Penalty::Direct(eps)).unwrap()
    }

    fn random_leaf(p: &HumProblem<f64>, rng: &mut ChaCha8Rng) -> LeafField<f64> {
        let values = (0..p.mesh.n() * p.tree.leaves())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        LeafField::from_vec(&p.tree, &p.mesh, values).unwrap()
    }

    #[test]
    fn zero_terminal_maps_to_zero() {
        let p = problem(4, 3, 1, 1e-2);
        let out = p
            .gramian_apply(&LeafField::zeros(&p.tree, &p.mesh))
            .unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gramian_is_symmetric_and_matches_duality() {
        let p = problem(5, 4, 2, 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_leaf(&p, &mut rng);
        let b = random_leaf(&p, &mut rng);
        let lab = p.inner(&p.gramian_apply(&a).unwrap(), &b);
        let alb = p.inner(&a, &p.gramian_apply(&b).unwrap());
        assert!((lab - alb).abs() <= 1e-12 * lab.abs().max(1.0));

        let ba = p.backward(&a).unwrap();
        let bb = p.backward(&b).unwrap();
        let direct = ba.big_z.time_inner(&bb.big_z, None, &p.mesh, &p.tree)
            + ba.zeta
                .time_inner(&bb.zeta, Some(p.region.mask()), &p.mesh, &p.tree);
        assert!((lab - direct).abs() <= 1e-12 * lab.abs().max(1.0));
    }

    #[test]
    fn zero_initial_state_gives_zero_control() {
        let mut p = problem(4, 3, 4, 1e-2);
        p.y0 = vec![0.0; 4];
        let sol = solve_hum(&p).unwrap();
        assert_eq!(sol.cg_iterations, 0);
        assert!(sol.z_t_star.values().iter().all(|&v| v == 0.0));
        assert!(sol.y_t.values().iter().all(|&v| v == 0.0));
        let report = report_bounds(&sol, &p);
        assert_eq!(report.cost_ratio, 0.0);
        assert_eq!(report.terminal_ratio, 0.0);
    }

    #[test]
    fn closure_holds_to_cg_tolerance() {
        for seed in 0..3 {
            let p = problem(6, 5, 10 + seed, 1e-3);
            let sol = solve_hum(&p).unwrap();
            assert!(sol.closure_ratio() <= 10.0, "{}", sol.closure_ratio());
            let report = report_bounds(&sol, &p);
            let eps2 = sol.epsilon * sol.epsilon * sol.z_t_star.norm_sq(&p.mesh, &p.tree);
            assert!((report.terminal_energy - eps2).abs() <= 1e-6 * eps2.max(1e-300));
            let u = sol.controls.u();
            for k in 0..u.level_count() {
                for chunk in u.level(k).chunks(p.mesh.n()) {
                    for (v, &inside) in chunk.iter().zip(p.region.mask()) {
                        assert!(inside || *v == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = problem(4, 3, 7, 1e-1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_leaf(&p, &mut rng);
        let g = p.gradient(&z).unwrap();
        for _ in 0..3 {
            let d = random_leaf(&p, &mut rng);
            let step = 1e-3;
            let mut plus = z.clone();
            plus.axpy(step, &d);
            let mut minus = z.clone();
            minus.axpy(-step, &d);
            let fd = (p.objective(&plus).unwrap() - p.objective(&minus).unwrap()) / (2.0 * step);
            let an = p.inner(&g, &d);
            assert!(
                (fd - an).abs() <= 1e-8 * an.abs().max(1e-12),
                "{fd} vs {an}"
            );
        }
    }

    #[test]
    fn cg_reports_failure_with_history() {
        let p = problem(6, 4, 5, 1e-6).with_cg(1e-14, 2);
        match solve_hum(&p) {
            Err(Error::Convergence {
                history,
                iterations,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn exponential_penalty() {
        let eps = Penalty::Exponential(0.5).value(0.125);
        assert!((eps - (-4.0f64).exp()).abs() < 1e-18);
        let mesh = Mesh::new(3).unwrap();
        let tree = ScenarioTree::new(2, 1.0).unwrap();
        let coeffs = Coefficients::zero(&mesh, &tree);
        let region = Region::from_interval(&mesh, 0.3, 0.7).unwrap();
        assert!(HumProblem::new(
            mesh,
            tree,
            coeffs,
            vec![0.0; 3],
            region,
            Penalty::Direct(0.0)
        )
        .is_err());
    }
}
