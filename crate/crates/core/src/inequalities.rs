//! Both sides of the weighted Carleman estimate and of the observability
//! inequality, evaluated on tree solutions, with empirical constants.
//!
//! Carleman weights `e^{2sφ}` fall far below the smallest float, so every
//! weighted integral is accumulated as a log.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::backward::solve_backward;
use crate::calc::ImplicitOperator;
use crate::error::{Error, Result};
use crate::forward::Coefficients;
use crate::hum::{conjugate_gradient, HumProblem, Penalty};
use crate::mesh::{Mesh, Region};
use crate::scalar::{LogSum, Real};
use crate::tree::{martingale_coeff, AdaptedField, LeafField, ScenarioTree};
use crate::weights::CarlemanWeights;

/// Per-sample generator, one ChaCha stream per sample index.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `Σ_{j=1..modes} c_j sin(jπx) / j` with standard normal `c_j`.
pub fn smooth_profile<T: Real>(xs: &[T], modes: usize, rng: &mut ChaCha8Rng, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    let pi = T::lit(std::f64::consts::PI);
    for j in 1..=modes {
        let c: f64 = StandardNormal.sample(rng);
        let jj = T::from_usize_lossy(j);
        let c = T::lit(c) / jj;
        for (v, &x) in out.iter_mut().zip(xs) {
            *v = *v + c * (jj * pi * x).sin();
        }
    }
}

/// Drift source `f` on the stepping levels and terminal datum `w_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanSources<T> {
    pub f: AdaptedField<T>,
    pub w_t: LeafField<T>,
}

impl<T: Real> CarlemanSources<T> {
    pub fn zero(mesh: &Mesh, tree: &ScenarioTree<T>) -> Self {
        Self {
            f: AdaptedField::stepping(tree, mesh),
            w_t: LeafField::zeros(tree, mesh),
        }
    }

    /// Smooth random sources with `modes` sine modes per node and leaf.
    pub fn smooth_random(
        mesh: &Mesh,
        tree: &ScenarioTree<T>,
        modes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let xs = mesh.interior_coords::<T>();
        let f = AdaptedField::from_fn(mesh.n(), tree.depth(), |_, _, out| {
            smooth_profile(&xs, modes, rng, out)
        });
        let mut w_t = LeafField::zeros(tree, mesh);
        for chunk in w_t.values_mut().chunks_mut(mesh.n()) {
            smooth_profile(&xs, modes, rng, chunk);
        }
        Self { f, w_t }
    }
}

/// Tree solution of `dw + D_h² w dt = f dt + g dB`.
#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanSolution<T> {
    pub w: AdaptedField<T>,
    pub f: AdaptedField<T>,
    pub g: AdaptedField<T>,
}

/// Integrates the w-equation backward from `w_T`: at each node
/// `g_k = (w₊ - w₋) / (2 sqrt(dt))` and `(I - dt D_h²) w_k = (w₊ + w₋)/2 - dt f_k`,
/// so that `w_{k+1} - w_k + dt D_h² w_k = dt f_k + g_k ΔB` holds on every edge.
pub fn solve_carleman_equation<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    sources: &CarlemanSources<T>,
) -> Result<CarlemanSolution<T>> {
    let n = mesh.n();
    let depth = tree.depth();
    if sources.w_t.len() != n * tree.leaves()
        || sources.f.n() != n
        || sources.f.level_count() < depth
    {
        return Err(Error::invalid("sources do not match mesh and tree"));
    }
    let dt = tree.dt();
    let op = ImplicitOperator::new(mesh, dt, &vec![T::zero(); n])?;
    let mut w = AdaptedField::full(tree, mesh);
    let mut g = AdaptedField::stepping(tree, mesh);
    w.level_mut(depth).copy_from_slice(sources.w_t.values());
    for k in (0..depth).rev() {
        let (current, next) = w.level_pair_mut(k);
        let next: &[T] = next;
        current
            .par_chunks_mut(n)
            .zip(g.level_mut(k).par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(node, (wk, gk))| -> Result<()> {
                let up = &next[2 * node * n..(2 * node + 1) * n];
                let down = &next[(2 * node + 1) * n..(2 * node + 2) * n];
                let f = sources.f.node(k, node);
                for i in 0..n {
                    let (mean, coeff) = martingale_coeff(up[i], down[i], tree.dt().sqrt());
                    gk[i] = coeff;
                    wk[i] = mean - dt * f[i];
                }
                op.solve_in_place(wk)
            })?;
    }
    Ok(CarlemanSolution {
        w,
        f: sources.f.clone(),
        g,
    })
}

/// Logs of the seven weighted integrals of the Carleman estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarlemanTerms<T> {
    /// `E∫_Q s³ e^{2sφ} w²`
    pub volume: LogSum<T>,
    /// `E∫_{Q*} s e^{2sφ} |D_h w|²`
    pub gradient: LogSum<T>,
    /// `E∫∫_{ω∩M} s³ e^{2sφ} w²`
    pub observed: LogSum<T>,
    /// `E∫_Q s² e^{2sφ} g²`
    pub diffusion: LogSum<T>,
    /// `E∫_Q e^{2sφ} f²`
    pub source: LogSum<T>,
    /// `h⁻² ∫_M e^{2sφ} w²` at `t = 0`
    pub initial: LogSum<T>,
    /// `h⁻² E∫_M e^{2sφ} w²` at `t = T`
    pub terminal: LogSum<T>,
}

impl<T: Real> CarlemanTerms<T> {
    pub fn log_lhs(&self) -> T {
        let mut s = self.volume;
        s.merge(self.gradient);
        s.log()
    }

    pub fn log_rhs(&self) -> T {
        let mut s = self.observed;
        for t in [self.diffusion, self.source, self.initial, self.terminal] {
            s.merge(t);
        }
        s.log()
    }

    /// `LHS / RHS`; zero when both vanish, infinite when only the RHS does.
    pub fn ratio(&self) -> T {
        let (l, r) = (self.log_lhs(), self.log_rhs());
        if l == T::neg_infinity() {
            T::zero()
        } else {
            (l - r).exp()
        }
    }

    pub fn named(&self) -> [(&'static str, LogSum<T>); 7] {
        [
            ("volume", self.volume),
            ("gradient", self.gradient),
            ("observed", self.observed),
            ("diffusion", self.diffusion),
            ("source", self.source),
            ("initial", self.initial),
            ("terminal", self.terminal),
        ]
    }
}

/// Evaluates every term with left-endpoint time quadrature. Refuses when the
/// spacing violates the weight regime.
pub fn carleman_terms<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    weights: &CarlemanWeights<T>,
    region: &Region,
    solution: &CarlemanSolution<T>,
) -> Result<CarlemanTerms<T>> {
    let h = mesh.h::<T>();
    weights.validate_regime(h).into_result()?;
    let n = mesh.n();
    let xs = mesh.interior_coords::<T>();
    let stars = mesh.star_coords::<T>();
    let phi: Vec<T> = xs.iter().map(|&x| weights.phi(x)).collect();
    let phi_star: Vec<T> = stars.iter().map(|&x| weights.phi(x)).collect();
    let (two, three) = (T::lit(2.0), T::lit(3.0));
    let log_h = h.ln();
    let log_dt = tree.dt().ln();
    let mut terms = CarlemanTerms {
        volume: LogSum::zero(),
        gradient: LogSum::zero(),
        observed: LogSum::zero(),
        diffusion: LogSum::zero(),
        source: LogSum::zero(),
        initial: LogSum::zero(),
        terminal: LogSum::zero(),
    };

    let mut dw = vec![T::zero(); n + 1];
    for k in 0..tree.depth() {
        let s = weights.s(tree.time(k));
        let log_s = s.ln();
        let base = log_dt + log_h + tree.probability(k).ln();
        for node in 0..tree.nodes_at(k) {
            let w = solution.w.node(k, node);
            let f = solution.f.node(k, node);
            let g = solution.g.node(k, node);
            for i in 0..n {
                let lw = two * s * phi[i] + base;
                terms.volume.add_weighted_square(lw, three * log_s, w[i]);
                if region.mask()[i] {
                    terms.observed.add_weighted_square(lw, three * log_s, w[i]);
                }
                terms.diffusion.add_weighted_square(lw, two * log_s, g[i]);
                terms.source.add_weighted_square(lw, T::zero(), f[i]);
            }
            for (j, d) in dw.iter_mut().enumerate() {
                let left = if j == 0 { T::zero() } else { w[j - 1] };
                let right = if j == n { T::zero() } else { w[j] };
                *d = (right - left) / h;
            }
            for (j, &d) in dw.iter().enumerate() {
                terms
                    .gradient
                    .add_weighted_square(two * s * phi_star[j] + base, log_s, d);
            }
        }
    }

    let endpoint = |level: usize, acc: &mut LogSum<T>| {
        let s = weights.s(tree.time(level));
        let base = log_h - two * log_h + tree.probability(level).ln();
        for node in 0..tree.nodes_at(level) {
            for (i, &v) in solution.w.node(level, node).iter().enumerate() {
                acc.add_weighted_square(two * s * phi[i] + base, T::zero(), v);
            }
        }
    };
    endpoint(0, &mut terms.initial);
    endpoint(tree.depth(), &mut terms.terminal);
    Ok(terms)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplingConfig {
    pub samples: usize,
    pub modes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanReport<T> {
    pub terms: Vec<CarlemanTerms<T>>,
    pub max_ratio: T,
    pub min_ratio: T,
}

/// Samples smooth random sources, solves the w-equation and evaluates the
/// Carleman ratio for each. Samples run in parallel; results keep index order.
pub fn carleman_sample<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    weights: &CarlemanWeights<T>,
    region: &Region,
    config: &SamplingConfig,
) -> Result<CarlemanReport<T>> {
    weights.validate_regime(mesh.h()).into_result()?;
    let terms = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(config.seed, i);
            let sources = CarlemanSources::smooth_random(mesh, tree, config.modes, &mut rng);
            let sol = solve_carleman_equation(mesh, tree, &sources)?;
            carleman_terms(mesh, tree, weights, region, &sol)
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios = terms.iter().map(CarlemanTerms::ratio);
    let max_ratio = ratios.clone().fold(T::zero(), T::max);
    let min_ratio = ratios.fold(T::infinity(), T::min);
    Ok(CarlemanReport {
        terms,
        max_ratio,
        min_ratio,
    })
}

/// `E‖z(0)‖²` against `Σ dt E‖Z‖²`, `Σ dt E‖χ_ω ζ‖²` and `E‖z_T‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservabilityTerms<T> {
    pub lhs: T,
    pub diffusion: T,
    pub observed: T,
    pub terminal: T,
}

impl<T: Real> ObservabilityTerms<T> {
    pub fn rhs(&self, terminal_factor: T) -> T {
        self.diffusion + self.observed + terminal_factor * self.terminal
    }

    /// `None` for the trivial sample `0 ≤ C·0`.
    pub fn ratio(&self, terminal_factor: T) -> Option<T> {
        let rhs = self.rhs(terminal_factor);
        if rhs > T::zero() {
            Some(self.lhs / rhs)
        } else if self.lhs == T::zero() {
            None
        } else {
            Some(T::infinity())
        }
    }
}

pub fn observability_terms<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    coeffs: &Coefficients<T>,
    region: &Region,
    z_t: &LeafField<T>,
) -> Result<ObservabilityTerms<T>> {
    let back = solve_backward(mesh, tree, coeffs, z_t)?;
    Ok(ObservabilityTerms {
        lhs: mesh.norm_sq(back.z0()),
        diffusion: back.diffusion_energy(mesh, tree),
        observed: back.observed_energy(region, mesh, tree),
        terminal: z_t.norm_sq(mesh, tree),
    })
}

/// Constant fitted on a training split and tested on a holdout split.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedConstant<T> {
    pub terminal_factor: T,
    pub train: Vec<T>,
    pub holdout: Vec<T>,
    pub excluded: usize,
    pub train_max: T,
    /// `train_max + (train_max - train_median)`.
    pub fitted: T,
    pub holdout_max: T,
    pub holdout_violations: usize,
    /// Holdout samples above the bare training maximum.
    pub raw_violations: usize,
    /// Supremum of the ratio over all terminal data, when computed.
    pub sharp: Option<T>,
}

fn median<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) * T::lit(0.5)
    }
}

pub fn fit_constant<T: Real>(
    train: Vec<T>,
    holdout: Vec<T>,
    excluded: usize,
    terminal_factor: T,
) -> FittedConstant<T> {
    let train_max = train.iter().copied().fold(T::zero(), T::max);
    let fitted = train_max + (train_max - median(&train));
    let holdout_max = holdout.iter().copied().fold(T::zero(), T::max);
    FittedConstant {
        terminal_factor,
        holdout_violations: holdout.iter().filter(|&&r| r > fitted).count(),
        raw_violations: holdout.iter().filter(|&&r| r > train_max).count(),
        train,
        holdout,
        excluded,
        train_max,
        fitted,
        holdout_max,
        sharp: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObservabilityConfig {
    pub train: usize,
    pub holdout: usize,
    pub c_eps: f64,
    pub seed: u64,
    /// Also compute the sharp constant through HUM solves.
    pub sharp: bool,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
}

/// The two readings of the terminal weight: `e^{-C/h}` and `h⁻² e^{-C/h}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport<T> {
    pub samples: Vec<ObservabilityTerms<T>>,
    pub plain: FittedConstant<T>,
    pub scaled: FittedConstant<T>,
}

fn split_ratios<T: Real>(
    samples: &[ObservabilityTerms<T>],
    train: usize,
    factor: T,
) -> (Vec<T>, Vec<T>, usize) {
    let mut excluded = 0;
    let (mut tr, mut ho) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        match s.ratio(factor) {
            Some(r) if i < train => tr.push(r),
            Some(r) => ho.push(r),
            None => excluded += 1,
        }
    }
    (tr, ho, excluded)
}

/// Random terminal data with iid standard normal entries, first `train`
/// samples for fitting and the next `holdout` for testing.
pub fn observability_sample<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    coeffs: &Coefficients<T>,
    region: &Region,
    config: &ObservabilityConfig,
) -> Result<ObservabilityReport<T>> {
    if config.train + config.holdout < 2 {
        return Err(Error::invalid("observability needs at least two samples"));
    }
    let samples = (0..config.train + config.holdout)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(config.seed, i);
            let values = (0..mesh.n() * tree.leaves())
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect();
            let z_t = LeafField::from_vec(tree, mesh, values)?;
            observability_terms(mesh, tree, coeffs, region, &z_t)
        })
        .collect::<Result<Vec<_>>>()?;
    let h = mesh.h::<T>();
    let plain_factor = (-T::lit(config.c_eps) / h).exp();
    let scaled_factor = plain_factor / (h * h);
    let fit = |factor: T| -> Result<FittedConstant<T>> {
        let (tr, ho, excluded) = split_ratios(&samples, config.train, factor);
        let mut c = fit_constant(tr, ho, excluded, factor);
        if config.sharp {
            c.sharp = Some(sharp_observability_constant(
                mesh,
                tree,
                coeffs,
                region,
                factor,
                T::lit(config.cg_tol),
                config.cg_maxiter,
            )?);
        }
        Ok(c)
    };
    let plain = fit(plain_factor)?;
    let scaled = fit(scaled_factor)?;
    Ok(ObservabilityReport {
        samples,
        plain,
        scaled,
    })
}

/// `sup_{z_T} E‖z(0)‖² / (Σ dt E‖Z‖² + Σ dt E‖χ_ω ζ‖² + c E‖z_T‖²)`.
///
/// The denominator is `E⟨z_T, (Λ + cI) z_T⟩` with `Λ` the controllability
/// Gramian, and `z_T ↦ z(0)` has adjoint `y0 ↦ y_free(T; y0)`. The supremum
/// is therefore the top eigenvalue of the `N × N` map
/// `y0 ↦ z(0)[(Λ + cI)⁻¹ y_free(T; y0)]`, one HUM solve per column.
pub fn sharp_observability_constant<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    coeffs: &Coefficients<T>,
    region: &Region,
    terminal_factor: T,
    cg_tol: T,
    cg_maxiter: usize,
) -> Result<T> {
    let n = mesh.n();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut y0 = vec![T::zero(); n];
        y0[j] = T::one();
        let problem = HumProblem::new(
            mesh.clone(),
            tree.clone(),
            coeffs.clone(),
            y0,
            region.clone(),
            Penalty::Direct(terminal_factor),
        )?
        .with_cg(cg_tol, cg_maxiter);
        let b = problem.free_terminal()?;
        let z_t = conjugate_gradient(&problem, &b)?.solution;
        let back = solve_backward(mesh, tree, coeffs, &z_t)?;
        for (i, &v) in back.z0().iter().enumerate() {
            k[(i, j)] = v.to_f64_lossy();
        }
    }
    let sym = (&k + k.transpose()) * 0.5;
    let top = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(T::lit(top))
}
