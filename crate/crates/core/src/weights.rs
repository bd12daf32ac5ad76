//! Carleman weight family and its parameter regime.
//!
//! With `ψ(x) = K - (x - x0)²`,
//!
//! ```text
//! θ(t) = 1 / ((t + δT)(T + δT - t)),   s(t) = λ θ(t)
//! φ(x) = e^{μψ(x)} - e^{2μ‖ψ‖∞},      varphi(x) = e^{μψ(x)}
//! r(t, x) = e^{s(t) φ(x)},            ρ = 1 / r
//! ```
//!
//! `‖ψ‖∞` is taken over the extended interval `G̃` that contains `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::Real;

const PSI_SAMPLES: usize = 4001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams<T> {
    pub t_final: T,
    pub lambda: T,
    pub mu: T,
    pub delta: T,
    /// Critical point of `ψ`, inside `ω₀`.
    pub x0: T,
    /// Additive level `K` of `ψ`.
    pub k_level: T,
    pub eps0: T,
    pub omega0: (T, T),
    pub omega: (T, T),
    /// Extended interval `G̃ ⊃ [0, 1]`.
    pub extended: (T, T),
}

impl<T: Real> WeightParams<T> {
    /// Defaults: `K = 2`, `x0` at the midpoint of `ω₀`, `ε₀ = 1`,
    /// `G̃ = (-0.1, 1.1)`.
    pub fn new(t_final: T, lambda: T, mu: T, delta: T, omega0: (T, T), omega: (T, T)) -> Self {
        Self {
            t_final,
            lambda,
            mu,
            delta,
            x0: (omega0.0 + omega0.1) * T::lit(0.5),
            k_level: T::lit(2.0),
            eps0: T::one(),
            omega0,
            omega,
            extended: (T::lit(-0.1), T::lit(1.1)),
        }
    }

    pub fn psi(&self, x: T) -> T {
        let d = x - self.x0;
        self.k_level - d * d
    }

    pub fn dpsi(&self, x: T) -> T {
        -(x - self.x0) * T::lit(2.0)
    }
}

fn weights_err(condition: impl Into<String>) -> Error {
    Error::InvalidWeights {
        condition: condition.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanWeights<T> {
    params: WeightParams<T>,
    psi_sup: T,
    /// `e^{2μ‖ψ‖∞}`
    phi_shift: T,
}

/// Outcome of the regime test `λ h (δ T²)⁻¹ ≤ ε₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeCheck<T> {
    pub ratio: T,
    pub eps0: T,
    pub accepted: bool,
}

impl<T: Real> RegimeCheck<T> {
    pub fn into_result(self) -> Result<Self> {
        if self.accepted {
            Ok(self)
        } else {
            Err(Error::RegimeRejected {
                ratio: self.ratio.to_f64_lossy(),
                eps0: self.eps0.to_f64_lossy(),
            })
        }
    }
}

impl<T: Real> CarlemanWeights<T> {
    /// Validates the parameter ranges and the four conditions on `ψ`:
    /// positivity on `G̃`, `ψ'(0) > 0`, `ψ'(1) < 0`, and `|ψ'| > 0` on `G̃ \ ω₀`.
    pub fn new(params: WeightParams<T>) -> Result<Self> {
        let p = &params;
        let (zero, one, half) = (T::zero(), T::one(), T::lit(0.5));
        if !(p.t_final > zero) {
            return Err(weights_err(format!("T > 0 (got {})", p.t_final)));
        }
        if !(p.lambda > one) {
            return Err(weights_err(format!("lambda > 1 (got {})", p.lambda)));
        }
        if !(p.mu > one) {
            return Err(weights_err(format!("mu > 1 (got {})", p.mu)));
        }
        if !(p.delta > zero && p.delta < half) {
            return Err(weights_err(format!("0 < delta < 1/2 (got {})", p.delta)));
        }
        if !(p.eps0 > zero && p.eps0 <= one) {
            return Err(weights_err(format!("0 < eps0 <= 1 (got {})", p.eps0)));
        }
        if !(p.omega.0 >= zero && p.omega.1 <= one && p.omega.0 < p.omega.1) {
            return Err(weights_err("omega must be a nonempty subinterval of (0,1)"));
        }
        if !(p.omega0.0 < p.omega0.1 && p.omega.0 < p.omega0.0 && p.omega0.1 < p.omega.1) {
            return Err(weights_err("closure(omega0) must lie inside omega"));
        }
        if !(p.extended.0 < zero && p.extended.1 > one) {
            return Err(weights_err("extended interval must contain [0,1]"));
        }

        let (a, b) = p.extended;
        let samples: Vec<T> = (0..PSI_SAMPLES)
            .map(|j| a + (b - a) * T::from_usize_lossy(j) / T::from_usize_lossy(PSI_SAMPLES - 1))
            .collect();

        let min_psi = samples
            .iter()
            .map(|&x| p.psi(x))
            .fold(T::infinity(), T::min);
        if !(min_psi > zero) {
            return Err(weights_err(format!(
                "psi > 0 on the extended interval (min {min_psi})"
            )));
        }
        if !(p.dpsi(zero) > zero) {
            return Err(weights_err(format!("psi'(0) > 0 (got {})", p.dpsi(zero))));
        }
        if !(p.dpsi(one) < zero) {
            return Err(weights_err(format!("psi'(1) < 0 (got {})", p.dpsi(one))));
        }
        let outside = |x: T| !(x > p.omega0.0 && x < p.omega0.1);
        let critical_outside = outside(p.x0) && p.x0 >= a && p.x0 <= b;
        let vanishing = samples.iter().any(|&x| outside(x) && p.dpsi(x) == zero);
        if critical_outside || vanishing {
            return Err(weights_err(
                "|psi'| > 0 outside omega0 (critical point must lie in omega0)",
            ));
        }

        let psi_sup = samples
            .iter()
            .chain(std::iter::once(&p.x0))
            .filter(|&&x| x >= a && x <= b)
            .map(|&x| p.psi(x).abs())
            .fold(zero, T::max);
        let phi_shift = (T::lit(2.0) * p.mu * psi_sup).exp();
        if !phi_shift.is_finite() {
            return Err(weights_err("exp(2 mu |psi|_inf) overflows; reduce mu or K"));
        }
        Ok(Self {
            params,
            psi_sup,
            phi_shift,
        })
    }

    pub fn params(&self) -> &WeightParams<T> {
        &self.params
    }

    pub fn psi_sup(&self) -> T {
        self.psi_sup
    }

    /// `θ(t)`, defined for `t ∈ [0, T]`.
    pub fn theta(&self, t: T) -> Result<T> {
        if t < T::zero() || t > self.params.t_final {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.params.t_final
            )));
        }
        Ok(self.theta_unchecked(t))
    }

    #[inline]
    pub(crate) fn theta_unchecked(&self, t: T) -> T {
        let p = &self.params;
        let dt = p.delta * p.t_final;
        ((t + dt) * (p.t_final + dt - t)).recip()
    }

    #[inline]
    pub fn s(&self, t: T) -> T {
        self.params.lambda * self.theta_unchecked(t)
    }

    #[inline]
    pub fn varphi(&self, x: T) -> T {
        (self.params.mu * self.params.psi(x)).exp()
    }

    #[inline]
    pub fn phi(&self, x: T) -> T {
        self.varphi(x) - self.phi_shift
    }

    pub fn r(&self, t: T, x: T) -> T {
        (self.s(t) * self.phi(x)).exp()
    }

    pub fn rho(&self, t: T, x: T) -> T {
        (-self.s(t) * self.phi(x)).exp()
    }

    /// `ln e^{2 s(t) φ(x)}`.
    #[inline]
    pub fn log_weight(&self, t: T, x: T) -> T {
        T::lit(2.0) * self.s(t) * self.phi(x)
    }

    /// `λ h / (δ T²)` against `ε₀` (non-strict).
    pub fn validate_regime(&self, h: T) -> RegimeCheck<T> {
        let p = &self.params;
        let ratio = p.lambda * h / (p.delta * p.t_final * p.t_final);
        RegimeCheck {
            ratio,
            eps0: p.eps0,
            accepted: ratio <= p.eps0,
        }
    }

    /// Max over the interior mesh and `samples` times in `[0, T]` of
    /// `|r D_h² ρ| / s²`.
    pub fn second_difference_probe(&self, mesh: &Mesh, samples: usize) -> T {
        self.probe(mesh, samples, |s, h, up, down| {
            let v = ((-s * up).exp() - T::lit(2.0) + (-s * down).exp()) / (h * h);
            v.abs() / (s * s)
        })
    }

    /// Max over the interior mesh and sampled times of
    /// `|r² A_h²ρ A_h D_h ρ| / s`.
    pub fn first_difference_probe(&self, mesh: &Mesh, samples: usize) -> T {
        self.probe(mesh, samples, |s, h, up, down| {
            let (eu, ed) = ((-s * up).exp(), (-s * down).exp());
            let avg2 = (eu + T::lit(2.0) + ed) / T::lit(4.0);
            let avg_diff = (eu - ed) / (T::lit(2.0) * h);
            (avg2 * avg_diff).abs() / s
        })
    }

    /// Evaluates `f(s, h, φ(x+h) - φ(x), φ(x-h) - φ(x))` on the grid, taking
    /// the maximum. Working with differences of `φ` keeps `ρ/ρ(x)` finite.
    fn probe(&self, mesh: &Mesh, samples: usize, f: impl Fn(T, T, T, T) -> T) -> T {
        let h = mesh.h::<T>();
        let samples = samples.max(2);
        let mut best = T::zero();
        for j in 0..samples {
            let t = self.params.t_final * T::from_usize_lossy(j) / T::from_usize_lossy(samples - 1);
            let s = self.s(t);
            for x in mesh.interior_coords::<T>() {
                let centre = self.varphi(x);
                let up = self.varphi(x + h) - centre;
                let down = self.varphi(x - h) - centre;
                best = best.max(f(s, h, up, down));
            }
        }
        best
    }
}

/// `h₁ = ε₀ δ₀ T² / λ`, the spacing at which `δ = δ₀` sits on the regime boundary.
pub fn schedule_h1<T: Real>(eps0: T, delta0: T, t_final: T, lambda: T) -> T {
    eps0 * delta0 * t_final * t_final / lambda
}

/// `δ = (h / h₁) δ₀`.
pub fn delta_schedule<T: Real>(h: T, h1: T, delta0: T) -> Result<T> {
    if !(h > T::zero()) {
        return Err(Error::invalid(format!("spacing must be positive, got {h}")));
    }
    if h > h1 {
        return Err(Error::invalid(format!("spacing {h} exceeds h1 = {h1}")));
    }
    if !(delta0 > T::zero() && delta0 < T::lit(0.5)) {
        return Err(Error::invalid(format!(
            "delta0 must lie in (0, 1/2), got {delta0}"
        )));
    }
    Ok(h / h1 * delta0)
}
