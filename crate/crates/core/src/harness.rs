//! Experiment configuration, built-in families, subcommand runners and CSV
//! emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backward::{duality_check, solve_backward};
use crate::calc::{
    consistency_error, ibp_residuals, leibniz_residuals, DualGridFunction, GridFunction,
};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, Coefficients, ControlPair};
use crate::hum::{report_bounds, solve_hum, HumProblem, Penalty};
use crate::inequalities::{
    carleman_sample, observability_sample, sample_rng, ObservabilityConfig, SamplingConfig,
};
use crate::mesh::{Mesh, Region};
use crate::tree::{AdaptedField, LeafField, ScenarioTree, DEFAULT_DEPTH_CAP};
use crate::weights::{delta_schedule, schedule_h1, CarlemanWeights, WeightParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    Zero,
    Constant,
    /// `a1 = m1 sin(2πx) cos(πt)`, `a2 = m2 cos(πx)`.
    Sinusoid,
    AdaptedRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientSpec {
    pub kind: CoefficientKind,
    pub a1: f64,
    pub a2: f64,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self {
            kind: CoefficientKind::Sinusoid,
            a1: 0.5,
            a2: 0.5,
        }
    }
}

impl CoefficientSpec {
    pub fn build(&self, mesh: &Mesh, tree: &ScenarioTree<f64>, seed: u64) -> Coefficients<f64> {
        use std::f64::consts::PI;
        let (m1, m2) = (self.a1, self.a2);
        match self.kind {
            CoefficientKind::Zero => Coefficients::zero(mesh, tree),
            CoefficientKind::Constant => Coefficients::constant(mesh, tree, m1, m2),
            CoefficientKind::Sinusoid => Coefficients::from_functions(
                mesh,
                tree,
                |x, t| m1 * (2.0 * PI * x).sin() * (PI * t).cos(),
                |x, _| m2 * (PI * x).cos(),
            ),
            CoefficientKind::AdaptedRandom => {
                let mut rng = sample_rng(seed, usize::MAX);
                Coefficients::adapted_random(mesh, tree, m1, m2, &mut rng)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub lambda: f64,
    pub mu: f64,
    pub delta0: f64,
    pub x0: f64,
    pub k_level: f64,
    pub eps0: f64,
    /// Penalty `ε = exp(-c_eps / h)`, shared by HUM and observability.
    pub c_eps: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            mu: 2.0,
            delta0: 0.4,
            x0: 0.45,
            k_level: 2.0,
            eps0: 1.0,
            c_eps: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumConfig {
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    /// Direct penalty; when absent `exp(-c_eps / h)` is used.
    pub epsilon: Option<f64>,
}

impl Default for HumConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            cg_maxiter: 500,
            epsilon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservabilitySettings {
    pub train: usize,
    pub holdout: usize,
    pub sharp: bool,
}

impl Default for ObservabilitySettings {
    fn default() -> Self {
        Self {
            train: 200,
            holdout: 200,
            sharp: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanSettings {
    pub samples: usize,
    pub modes: usize,
}

impl Default for CarlemanSettings {
    fn default() -> Self {
        Self {
            samples: 100,
            modes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Cell counts `1/h`; the interior has `cells - 1` points.
    pub cells: Vec<usize>,
    /// Observability samples per point, split evenly into train and holdout.
    pub obs_samples: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            cells: vec![8, 12, 16, 20],
            obs_samples: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub depth: usize,
    pub t_final: f64,
    pub omega: (f64, f64),
    pub omega0: (f64, f64),
    pub coefficients: CoefficientSpec,
    pub weights: WeightConfig,
    pub hum: HumConfig,
    pub observability: ObservabilitySettings,
    pub carleman: CarlemanSettings,
    pub sweep: SweepSettings,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 8,
            depth: 8,
            t_final: 1.0,
            omega: (0.3, 0.6),
            omega0: (0.4, 0.5),
            coefficients: CoefficientSpec::default(),
            weights: WeightConfig::default(),
            hum: HumConfig::default(),
            observability: ObservabilitySettings::default(),
            carleman: CarlemanSettings::default(),
            sweep: SweepSettings::default(),
            seed: 2024,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads JSON; a missing or malformed file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("cannot parse {}: {e}", path.display())]))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Collects every violated constraint before any run starts.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(
            self.n >= 2,
            format!("n must be at least 2 (got {})", self.n),
        );
        need(
            (1..=DEFAULT_DEPTH_CAP).contains(&self.depth),
            format!(
                "depth must lie in 1..={DEFAULT_DEPTH_CAP} (got {})",
                self.depth
            ),
        );
        need(
            self.t_final > 0.0,
            format!("t_final must be positive (got {})", self.t_final),
        );
        let (a, b) = self.omega;
        need(
            0.0 <= a && a < b && b <= 1.0,
            format!("omega must be a nonempty subinterval of (0,1) (got ({a}, {b}))"),
        );
        let (c, d) = self.omega0;
        need(
            c < d && a < c && d < b,
            format!("closure of omega0 ({c}, {d}) must lie inside omega ({a}, {b})"),
        );
        let w = &self.weights;
        need(
            c < w.x0 && w.x0 < d,
            format!("x0 = {} must lie in omega0", w.x0),
        );
        need(
            w.lambda > 1.0,
            format!("lambda must exceed 1 (got {})", w.lambda),
        );
        need(w.mu > 1.0, format!("mu must exceed 1 (got {})", w.mu));
        need(
            w.delta0 > 0.0 && w.delta0 < 0.5,
            format!("delta0 must lie in (0, 1/2) (got {})", w.delta0),
        );
        need(
            w.eps0 > 0.0 && w.eps0 <= 1.0,
            format!("eps0 must lie in (0, 1] (got {})", w.eps0),
        );
        need(
            w.c_eps > 0.0,
            format!("c_eps must be positive (got {})", w.c_eps),
        );
        need(
            w.k_level > 0.0,
            format!("k_level must be positive (got {})", w.k_level),
        );
        need(
            self.hum.cg_tol > 0.0,
            format!("cg_tol must be positive (got {})", self.hum.cg_tol),
        );
        need(
            self.hum.cg_maxiter >= 1,
            "cg_maxiter must be at least 1".to_string(),
        );
        if let Some(eps) = self.hum.epsilon {
            need(
                eps > 0.0 && eps.is_finite(),
                format!("epsilon must be positive (got {eps})"),
            );
        }
        let cf = &self.coefficients;
        need(
            cf.a1.is_finite() && cf.a2.is_finite() && cf.a1 >= 0.0 && cf.a2 >= 0.0,
            format!(
                "coefficient magnitudes must be finite and nonnegative (got {}, {})",
                cf.a1, cf.a2
            ),
        );
        let dt = self.t_final / self.depth.max(1) as f64;
        need(
            dt * cf.a1 < 1.0,
            format!(
                "dt * a1 = {} must be below 1 for the implicit step",
                dt * cf.a1
            ),
        );
        need(
            self.observability.train + self.observability.holdout >= 2,
            "observability needs at least two samples".to_string(),
        );
        need(
            self.carleman.samples >= 1,
            "carleman.samples must be at least 1".to_string(),
        );
        need(
            self.carleman.modes >= 1,
            "carleman.modes must be at least 1".to_string(),
        );
        need(
            self.sweep.cells.iter().all(|&c| c >= 3),
            "sweep cells must all be at least 3".to_string(),
        );
        need(
            self.sweep.obs_samples >= 2,
            "sweep.obs_samples must be at least 2".to_string(),
        );
        if self.n >= 2 && 0.0 <= a && a < b && b <= 1.0 {
            let mesh = Mesh::new(self.n).expect("n checked");
            need(
                Region::from_interval(&mesh, a, b).is_ok(),
                format!("omega contains no interior mesh point at n = {}", self.n),
            );
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.n)
    }

    pub fn tree(&self) -> Result<ScenarioTree<f64>> {
        ScenarioTree::new(self.depth, self.t_final)
    }

    pub fn region(&self, mesh: &Mesh) -> Result<Region> {
        Region::from_interval(mesh, self.omega.0, self.omega.1)
    }

    pub fn weight_params(&self, delta: f64) -> WeightParams<f64> {
        let w = &self.weights;
        let mut p = WeightParams::new(self.t_final, w.lambda, w.mu, delta, self.omega0, self.omega);
        p.x0 = w.x0;
        p.k_level = w.k_level;
        p.eps0 = w.eps0;
        p
    }

    /// `h₁ = ε₀ δ₀ T² / λ`.
    pub fn h1(&self) -> f64 {
        let w = &self.weights;
        schedule_h1(w.eps0, w.delta0, self.t_final, w.lambda)
    }

    pub fn penalty(&self) -> Penalty<f64> {
        match self.hum.epsilon {
            Some(eps) => Penalty::Direct(eps),
            None => Penalty::Exponential(self.weights.c_eps),
        }
    }
}

/// Standard initial state `Σ_{j=1..3} sin(jπx) / j`.
pub fn standard_initial_state(mesh: &Mesh) -> Vec<f64> {
    use std::f64::consts::PI;
    mesh.interior_coords::<f64>()
        .iter()
        .map(|&x| (1..=3).map(|j| (j as f64 * PI * x).sin() / j as f64).sum())
        .collect()
}

/// One asserted check with its measured value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: value={:e} tol={:e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

fn uniform_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Product and average identities on random closure pairs with nonzero
/// boundary values, residual divided by the natural scale of each identity.
pub fn check_leibniz(sizes: &[usize], pairs: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (s, &n) in sizes.iter().enumerate() {
        let mesh = Mesh::new(n)?;
        let h = mesh.h::<f64>();
        let mut rng = sample_rng(seed, s);
        for _ in 0..pairs {
            let u = GridFunction::new(&mesh, uniform_vec(n + 2, &mut rng))?;
            let v = GridFunction::new(&mesh, uniform_vec(n + 2, &mut rng))?;
            let (mu, mv) = (max_abs(u.values()), max_abs(v.values()));
            let (r1, r2, r3) = leibniz_residuals(h, &u, &v);
            worst = worst
                .max(r1 * h / (mu * mv))
                .max(r2 / (mu * mv))
                .max(r3 / mu);
        }
    }
    Ok(Check::at_most(
        "leibniz",
        worst,
        1e-12,
        format!("{pairs} pairs on N in {sizes:?}"),
    ))
}

/// Summation by parts with a star-mesh partner, nonzero boundary values.
pub fn check_ibp(sizes: &[usize], pairs: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (s, &n) in sizes.iter().enumerate() {
        let mesh = Mesh::new(n)?;
        let h = mesh.h::<f64>();
        let mut rng = sample_rng(seed ^ 0x1b9, s);
        for _ in 0..pairs {
            let u = GridFunction::new(&mesh, uniform_vec(n + 2, &mut rng))?;
            let v = DualGridFunction::new(&mesh, uniform_vec(n + 1, &mut rng))?;
            let scale = max_abs(u.values()) * max_abs(v.values());
            let (r1, r2) = ibp_residuals(&mesh, &u, &v);
            worst = worst.max(r1 * h / scale).max(r2 / scale);
        }
    }
    Ok(Check::at_most(
        "integration-by-parts",
        worst,
        1e-12,
        format!("{pairs} pairs on N in {sizes:?}"),
    ))
}

/// Observed orders of `A_h^m D_h^n sin(πx)` on `[1/4, 3/4]` as `h` halves
/// from `1/cells`. Returns the largest `|order - 2|`.
pub fn check_consistency(cells: usize, halvings: usize) -> Result<Check> {
    use std::f64::consts::PI;
    let f = |x: f64| (PI * x).sin();
    let derivs: [fn(f64) -> f64; 3] = [
        |x| (PI * x).sin(),
        |x| PI * (PI * x).cos(),
        |x| -PI * PI * (PI * x).sin(),
    ];
    let combos = [(0usize, 1usize), (0, 2), (1, 1), (2, 0)];
    let mut worst: f64 = 0.0;
    let mut orders = Vec::new();
    for &(m, d) in &combos {
        let errs: Vec<f64> = (0..=halvings)
            .map(|j| {
                let mesh = Mesh::new(cells * (1 << j) - 1)?;
                Ok(consistency_error(&mesh, m, d, f, derivs[d], (0.25, 0.75)))
            })
            .collect::<Result<_>>()?;
        for pair in errs.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            worst = worst.max((order - 2.0).abs());
            orders.push(order);
        }
    }
    let lo = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = orders.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Check::at_most(
        "consistency-order",
        worst,
        0.15,
        format!("orders in [{lo:.4}, {hi:.4}] for (m,n) in {combos:?}"),
    ))
}

/// Probabilities, increments and the tower property on depths `1..=max_depth`.
pub fn check_tree(max_depth: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for depth in 1..=max_depth {
        let tree = ScenarioTree::<f64>::new(depth, 1.0)?;
        let dt = tree.dt();
        for k in 0..=depth {
            worst = worst.max((tree.expectation(k, |_| 1.0) - 1.0).abs());
        }
        for k in 0..depth {
            let mean = tree.expectation(k, |node| {
                0.5 * (tree.increment(2 * node) + tree.increment(2 * node + 1))
            });
            worst = worst.max(mean.abs());
        }
        for child in 0..tree.leaves() {
            worst = worst.max((tree.increment(child).powi(2) - dt).abs());
        }
        let mut rng = sample_rng(seed, depth);
        let mut x: Vec<f64> = uniform_vec(tree.leaves(), &mut rng);
        let total = tree.expectation(depth, |l| x[l]);
        for k in (0..depth).rev() {
            x = (0..tree.nodes_at(k))
                .map(|n| 0.5 * (x[2 * n] + x[2 * n + 1]))
                .collect();
            worst = worst.max((tree.expectation(k, |n| x[n]) - total).abs());
        }
    }
    Ok(Check::at_most(
        "tree-exactness",
        worst,
        1e-14,
        format!("depths 1..={max_depth}"),
    ))
}

/// Duality identity on random instances with random coefficients, state,
/// controls and terminal data.
pub fn check_duality(instances: usize, max_n: usize, max_depth: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = sample_rng(seed ^ 0xd0a1, i);
        let n = rng.gen_range(2..=max_n);
        let depth = rng.gen_range(1..=max_depth);
        let mesh = Mesh::new(n)?;
        let tree = ScenarioTree::<f64>::new(depth, 1.0)?;
        let bound1: f64 = 0.9 / tree.dt().max(1.0);
        let coeffs = Coefficients::adapted_random(&mesh, &tree, bound1, 1.5, &mut rng);
        let y0 = uniform_vec(n, &mut rng);
        let mut field = || {
            AdaptedField::from_fn(n, depth, |_, _, out| {
                out.copy_from_slice(&uniform_vec(n, &mut rng))
            })
        };
        let (u, v) = (field(), field());
        let a = rng.gen_range(0.0..0.5);
        let region =
            Region::from_interval(&mesh, a, a + 0.5).unwrap_or_else(|_| Region::full(&mesh));
        let controls = ControlPair::new(u, v, region)?;
        let z_t = LeafField::from_vec(&tree, &mesh, uniform_vec(n * tree.leaves(), &mut rng))?;
        let fwd = solve_forward(&mesh, &tree, &coeffs, &y0, Some(&controls))?;
        let bwd = solve_backward(&mesh, &tree, &coeffs, &z_t)?;
        let check = duality_check(&mesh, &tree, &y0, &controls, &fwd, &bwd);
        worst = worst.max(check.relative_residual());
    }
    Ok(Check::at_most(
        "duality",
        worst,
        1e-10,
        format!("{instances} instances, N <= {max_n}, depth <= {max_depth}"),
    ))
}

/// The identity suite run by the `identities` subcommand.
pub fn run_identities(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let sizes = [3, 8, 16, 64];
    Ok(vec![
        check_leibniz(&sizes, 100, cfg.seed)?,
        check_ibp(&sizes, 100, cfg.seed)?,
        check_consistency(16, 4)?,
        check_tree(10, cfg.seed)?,
        check_duality(50, 16, 10, cfg.seed)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HumSummary {
    pub n: usize,
    pub depth: usize,
    pub h: f64,
    pub epsilon: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub closure_error: f64,
    pub closure_ratio: f64,
    pub objective: f64,
    pub initial_energy: f64,
    pub cost: f64,
    pub cost_ratio: f64,
    pub terminal_energy: f64,
    pub terminal_ratio: f64,
    pub terminal_over_eps: f64,
    pub residual_history: Vec<f64>,
}

/// Solves one HUM problem on the configured mesh, tree and coefficients
/// from the given initial state.
pub fn hum_summary(cfg: &ExperimentConfig, mesh: &Mesh, y0: Vec<f64>) -> Result<HumSummary> {
    let tree = cfg.tree()?;
    let coeffs = cfg.coefficients.build(mesh, &tree, cfg.seed);
    let region = cfg.region(mesh)?;
    let problem = HumProblem::new(mesh.clone(), tree, coeffs, y0, region, cfg.penalty())?
        .with_cg(cfg.hum.cg_tol, cfg.hum.cg_maxiter);
    let sol = solve_hum(&problem)?;
    let report = report_bounds(&sol, &problem);
    Ok(HumSummary {
        n: mesh.n(),
        depth: cfg.depth,
        h: mesh.h(),
        epsilon: sol.epsilon,
        cg_iterations: sol.cg_iterations,
        cg_residual: sol.cg_residual(),
        closure_error: sol.closure_error,
        closure_ratio: sol.closure_ratio(),
        objective: sol.objective,
        initial_energy: report.initial_energy,
        cost: report.cost,
        cost_ratio: report.cost_ratio,
        terminal_energy: report.terminal_energy,
        terminal_ratio: report.terminal_ratio,
        terminal_over_eps: report.terminal_over_eps,
        residual_history: sol.residual_history,
    })
}

pub fn run_hum(cfg: &ExperimentConfig) -> Result<(HumSummary, Vec<Check>)> {
    let mesh = cfg.mesh()?;
    let summary = hum_summary(cfg, &mesh, standard_initial_state(&mesh))?;
    let check = Check::at_most(
        "hum-closure",
        summary.closure_ratio,
        10.0,
        format!(
            "closure error {:e}, cg residual {:e}",
            summary.closure_error, summary.cg_residual
        ),
    );
    Ok((summary, vec![check]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub terminal_factor: f64,
    pub train: usize,
    pub holdout: usize,
    pub excluded: usize,
    pub train_max: f64,
    pub fitted: f64,
    pub holdout_max: f64,
    pub holdout_violations: usize,
    pub raw_violations: usize,
    pub sharp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservabilitySummary {
    pub n: usize,
    pub depth: usize,
    pub c_eps: f64,
    /// Terminal weight `e^{-C/h}`.
    pub plain: FitSummary,
    /// Terminal weight `h⁻² e^{-C/h}`.
    pub scaled: FitSummary,
}

fn fit_summary(f: &crate::inequalities::FittedConstant<f64>) -> FitSummary {
    FitSummary {
        terminal_factor: f.terminal_factor,
        train: f.train.len(),
        holdout: f.holdout.len(),
        excluded: f.excluded,
        train_max: f.train_max,
        fitted: f.fitted,
        holdout_max: f.holdout_max,
        holdout_violations: f.holdout_violations,
        raw_violations: f.raw_violations,
        sharp: f.sharp,
    }
}

pub fn observability_config(
    cfg: &ExperimentConfig,
    train: usize,
    holdout: usize,
    sharp: bool,
) -> ObservabilityConfig {
    ObservabilityConfig {
        train,
        holdout,
        c_eps: cfg.weights.c_eps,
        seed: cfg.seed,
        sharp,
        cg_tol: 1e-12,
        cg_maxiter: cfg.hum.cg_maxiter.max(1000),
    }
}

pub fn run_observability(cfg: &ExperimentConfig) -> Result<(ObservabilitySummary, Vec<Check>)> {
    let mesh = cfg.mesh()?;
    let tree = cfg.tree()?;
    let coeffs = cfg.coefficients.build(&mesh, &tree, cfg.seed);
    let region = cfg.region(&mesh)?;
    let o = &cfg.observability;
    let report = observability_sample(
        &mesh,
        &tree,
        &coeffs,
        &region,
        &observability_config(cfg, o.train, o.holdout, o.sharp),
    )?;
    let summary = ObservabilitySummary {
        n: mesh.n(),
        depth: cfg.depth,
        c_eps: cfg.weights.c_eps,
        plain: fit_summary(&report.plain),
        scaled: fit_summary(&report.scaled),
    };
    let mut checks = Vec::new();
    for (label, fit) in [("plain", &summary.plain), ("scaled", &summary.scaled)] {
        checks.push(Check::at_most(
            &format!("observability-holdout-{label}"),
            fit.holdout_violations as f64,
            0.0,
            format!(
                "fitted C {:e} from {} train, {} holdout, {} raw-max violations",
                fit.fitted, fit.train, fit.holdout, fit.raw_violations
            ),
        ));
        if let Some(sharp) = fit.sharp {
            let worst = fit.train_max.max(fit.holdout_max);
            checks.push(Check::at_most(
                &format!("observability-below-sharp-{label}"),
                worst / sharp,
                1.0 + 1e-8,
                format!("sample max {worst:e}, sharp constant {sharp:e}"),
            ));
        }
    }
    Ok((summary, checks))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlemanLevel {
    pub n: usize,
    pub h: f64,
    pub regime_ratio: f64,
    pub samples: usize,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlemanSummary {
    pub lambda: f64,
    pub mu: f64,
    pub delta: f64,
    pub coarse: CarlemanLevel,
    pub fine: CarlemanLevel,
    /// `max(fine, coarse) / min(fine, coarse)` of the two max ratios.
    pub refinement_factor: f64,
}

/// Carleman ratios at the configured mesh and one refinement (`h/2`), with
/// `δ` from the schedule at the coarse spacing and held fixed.
pub fn run_carleman(cfg: &ExperimentConfig) -> Result<(CarlemanSummary, Vec<Check>)> {
    let coarse = cfg.mesh()?;
    let fine = Mesh::new(2 * (cfg.n + 1) - 1)?;
    let tree = cfg.tree()?;
    let delta = delta_schedule(coarse.h(), cfg.h1(), cfg.weights.delta0)?;
    let weights = CarlemanWeights::new(cfg.weight_params(delta))?;
    let sampling = SamplingConfig {
        samples: cfg.carleman.samples,
        modes: cfg.carleman.modes,
        seed: cfg.seed,
    };
    let level = |mesh: &Mesh| -> Result<CarlemanLevel> {
        let region = cfg.region(mesh)?;
        let report = carleman_sample(mesh, &tree, &weights, &region, &sampling)?;
        Ok(CarlemanLevel {
            n: mesh.n(),
            h: mesh.h(),
            regime_ratio: weights.validate_regime(mesh.h()).ratio,
            samples: report.terms.len(),
            max_ratio: report.max_ratio,
            min_ratio: report.min_ratio,
        })
    };
    let (c, f) = (level(&coarse)?, level(&fine)?);
    let factor = c.max_ratio.max(f.max_ratio) / c.max_ratio.min(f.max_ratio);
    let summary = CarlemanSummary {
        lambda: cfg.weights.lambda,
        mu: cfg.weights.mu,
        delta,
        coarse: c,
        fine: f,
        refinement_factor: factor,
    };
    let finite = summary.coarse.max_ratio.is_finite() && summary.fine.max_ratio.is_finite();
    let checks = vec![
        Check {
            name: "carleman-finite".into(),
            value: summary.coarse.max_ratio.max(summary.fine.max_ratio),
            tolerance: f64::INFINITY,
            passed: finite && summary.coarse.samples >= 1,
            detail: format!("{} samples per mesh", summary.coarse.samples),
        },
        Check::at_most(
            "carleman-refinement",
            if factor.is_nan() {
                f64::INFINITY
            } else {
                factor
            },
            5.0,
            format!("N {} -> {}", summary.coarse.n, summary.fine.n),
        ),
    ];
    Ok((summary, checks))
}

/// One line of the sweep CSV; numeric fields are empty on skipped rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub delta: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub depth: usize,
    pub eps: Option<f64>,
    pub obs_c: Option<f64>,
    pub term_ratio: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub cg_iters: Option<usize>,
    pub closure_err: Option<f64>,
    pub skipped: bool,
    pub reason: String,
}

pub const CSV_HEADER: &str =
    "h,delta,lambda,mu,N,depth,eps,obs_C,term_ratio,cost_ratio,cg_iters,closure_err,skipped,reason";

fn sweep_point(cfg: &ExperimentConfig, cells: usize) -> Result<SweepRow> {
    let mesh = Mesh::new(cells - 1)?;
    let h = mesh.h::<f64>();
    let mut row = SweepRow {
        h,
        delta: None,
        lambda: cfg.weights.lambda,
        mu: cfg.weights.mu,
        n: mesh.n(),
        depth: cfg.depth,
        eps: None,
        obs_c: None,
        term_ratio: None,
        cost_ratio: None,
        cg_iters: None,
        closure_err: None,
        skipped: false,
        reason: String::new(),
    };
    let skip = |mut row: SweepRow, reason: String| {
        row.skipped = true;
        row.reason = reason;
        Ok(row)
    };
    let delta = match delta_schedule(h, cfg.h1(), cfg.weights.delta0) {
        Ok(d) => d,
        Err(e) => return skip(row, e.to_string()),
    };
    row.delta = Some(delta);
    let weights = match CarlemanWeights::new(cfg.weight_params(delta)) {
        Ok(w) => w,
        Err(e) => return skip(row, e.to_string()),
    };
    if let Err(e) = weights.validate_regime(h).into_result() {
        return skip(row, e.to_string());
    }
    if Region::from_interval(&mesh, cfg.omega.0, cfg.omega.1).is_err() {
        return skip(row, "omega contains no mesh point".into());
    }

    let hum = hum_summary(cfg, &mesh, standard_initial_state(&mesh))?;
    row.eps = Some(hum.epsilon);
    row.term_ratio = Some(hum.terminal_ratio);
    row.cost_ratio = Some(hum.cost_ratio);
    row.cg_iters = Some(hum.cg_iterations);
    row.closure_err = Some(hum.closure_error);

    let tree = cfg.tree()?;
    let coeffs = cfg.coefficients.build(&mesh, &tree, cfg.seed);
    let region = cfg.region(&mesh)?;
    let half = cfg.sweep.obs_samples / 2;
    let obs = observability_sample(
        &mesh,
        &tree,
        &coeffs,
        &region,
        &observability_config(cfg, half, cfg.sweep.obs_samples - half, false),
    )?;
    row.obs_c = Some(obs.plain.fitted);
    Ok(row)
}

/// One row per configured cell count, in order.
pub fn h_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.sweep
        .cells
        .iter()
        .map(|&c| sweep_point(cfg, c))
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Monotone decay, negative log-slope and the largest cost ratio.
pub fn sweep_checks(rows: &[SweepRow]) -> Vec<Check> {
    let used: Vec<&SweepRow> = rows.iter().filter(|r| !r.skipped).collect();
    let skipped = rows.len() - used.len();
    let inv_h: Vec<f64> = used.iter().map(|r| 1.0 / r.h).collect();
    let ratios: Vec<f64> = used
        .iter()
        .map(|r| r.term_ratio.unwrap_or(f64::NAN))
        .collect();
    let increases = ratios
        .windows(2)
        .zip(inv_h.windows(2))
        .filter(|(r, x)| !(x[1] > x[0] && r[1] <= r[0]))
        .count();
    let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let slope = if used.len() >= 2 {
        ls_slope(&inv_h, &logs)
    } else {
        f64::NAN
    };
    let max_cost = used.iter().filter_map(|r| r.cost_ratio).fold(0.0, f64::max);
    vec![
        Check::at_most(
            "sweep-monotone-decay",
            increases as f64 + skipped as f64,
            0.0,
            format!("terminal ratios {ratios:?}, {skipped} skipped"),
        ),
        Check {
            name: "sweep-negative-slope".into(),
            value: slope,
            tolerance: 0.0,
            passed: slope < 0.0,
            detail: "least-squares slope of ln(term_ratio) against 1/h".into(),
        },
        Check {
            name: "sweep-cost-bound".into(),
            value: max_cost,
            tolerance: f64::INFINITY,
            passed: max_cost.is_finite(),
            detail: "largest cost ratio across the sweep".into(),
        },
    ]
}

/// Writes the sweep CSV with an LF-terminated header and shortest
/// round-trip floats.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{CSV_HEADER}")?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}
