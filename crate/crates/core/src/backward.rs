//! Backward stochastic equation `dz + D_h² z dt = -(a1 z + a2 Z) dt + Z dB`
//! on the scenario tree, built as the exact transpose of the forward step.
//!
//! Transposing one forward step with respect to `E⟨·,·⟩_M` gives, at a node
//! with children `+` and `-`,
//!
//! ```text
//! w±   = M⁻ᵀ z_{k+1}(±)
//! ζ_k  = (w₊ + w₋) / 2
//! Z_k  = (w₊ - w₋) / (2 sqrt(dt))
//! z_k  = ζ_k + dt a2 Z_k
//! ```
//!
//! so that `E⟨y_{k+1}, z_{k+1}⟩ = E⟨y_k, z_k⟩ + dt E⟨χ_ω u_k, ζ_k⟩ + dt E⟨v_k, Z_k⟩`
//! holds exactly and the duality identity telescopes over the tree.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{Coefficients, ControlPair, ForwardSolution};
use crate::mesh::{Mesh, Region};
use crate::scalar::Real;
use crate::tree::{AdaptedField, LeafField, ScenarioTree};

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardSolution<T> {
    /// `z` on every level `0..=depth`; level `depth` is the terminal datum.
    pub z: AdaptedField<T>,
    /// Transpose-solved conditional means `ζ_k`, paired with the drift control.
    pub zeta: AdaptedField<T>,
    /// Martingale integrand `Z_k`, paired with the diffusion control.
    pub big_z: AdaptedField<T>,
}

impl<T: Real> BackwardSolution<T> {
    /// `z(0)` at the root.
    pub fn z0(&self) -> &[T] {
        self.z.node(0, 0)
    }

    /// Controls `(χ_ω ζ, Z)` scaled by `sign`; HUM uses `sign = -1`.
    pub fn induced_controls(&self, region: &Region, sign: T) -> Result<ControlPair<T>> {
        ControlPair::new(
            self.zeta.map(|v| sign * v),
            self.big_z.map(|v| sign * v),
            region.clone(),
        )
    }

    /// `Σ dt E‖Z‖²`.
    pub fn diffusion_energy(&self, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        self.big_z.time_inner(&self.big_z, None, mesh, tree)
    }

    /// `Σ dt E‖χ_ω ζ‖²`.
    pub fn observed_energy(&self, region: &Region, mesh: &Mesh, tree: &ScenarioTree<T>) -> T {
        self.zeta
            .time_inner(&self.zeta, Some(region.mask()), mesh, tree)
    }
}

/// One backward step at a node from the values at its two children.
/// Returns `(z_k, ζ_k, Z_k)`.
pub fn backward_step<T: Real>(
    mesh: &Mesh,
    dt: T,
    z_up: &[T],
    z_down: &[T],
    a1: &[T],
    a2: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = mesh.n();
    let (mut z, mut zeta, mut big_z) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let op = crate::calc::ImplicitOperator::new(mesh, dt, a1)?;
    let mut up = z_up.to_vec();
    let mut down = z_down.to_vec();
    step_into(
        &op, dt, &mut up, &mut down, a2, &mut z, &mut zeta, &mut big_z,
    )?;
    Ok((z, zeta, big_z))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_into<T: Real>(
    op: &crate::calc::ImplicitOperator<T>,
    dt: T,
    up: &mut [T],
    down: &mut [T],
    a2: &[T],
    z: &mut [T],
    zeta: &mut [T],
    big_z: &mut [T],
) -> Result<()> {
    op.solve_transpose_in_place(up)?;
    op.solve_transpose_in_place(down)?;
    let sqrt_dt = dt.sqrt();
    for i in 0..z.len() {
        let (mean, coeff) = crate::tree::martingale_coeff(up[i], down[i], sqrt_dt);
        zeta[i] = mean;
        big_z[i] = coeff;
        z[i] = mean + dt * a2[i] * coeff;
    }
    Ok(())
}

/// Solves backward from leaf data `z_T`.
pub fn solve_backward<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    coeffs: &Coefficients<T>,
    z_t: &LeafField<T>,
) -> Result<BackwardSolution<T>> {
    let n = mesh.n();
    if z_t.n() != n || z_t.len() != n * tree.leaves() {
        return Err(Error::invalid(
            "terminal datum does not match mesh and tree",
        ));
    }
    coeffs.validate(mesh, tree)?;
    let dt = tree.dt();
    let depth = tree.depth();
    let mut z = AdaptedField::full(tree, mesh);
    let mut zeta = AdaptedField::stepping(tree, mesh);
    let mut big_z = AdaptedField::stepping(tree, mesh);
    z.level_mut(depth).copy_from_slice(z_t.values());

    for k in (0..depth).rev() {
        let (current, next) = z.level_pair_mut(k);
        let next: &[T] = next;
        current
            .par_chunks_mut(n)
            .zip(zeta.level_mut(k).par_chunks_mut(n))
            .zip(big_z.level_mut(k).par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(node, ((zk, zetak), bigzk))| -> Result<()> {
                let op = coeffs.operator(mesh, dt, k, node)?;
                let mut up = next[(2 * node) * n..(2 * node + 1) * n].to_vec();
                let mut down = next[(2 * node + 1) * n..(2 * node + 2) * n].to_vec();
                step_into(
                    &op,
                    dt,
                    &mut up,
                    &mut down,
                    coeffs.a2.at(k, node),
                    zk,
                    zetak,
                    bigzk,
                )
            })?;
    }
    Ok(BackwardSolution { z, zeta, big_z })
}

/// Both sides of the discrete duality identity
/// `E⟨y(T), z_T⟩ - ⟨y0, z(0)⟩ = Σ dt E⟨χ_ω u, ζ⟩ + Σ dt E⟨v, Z⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityCheck<T> {
    pub terminal_pairing: T,
    pub initial_pairing: T,
    pub drift_pairing: T,
    pub diffusion_pairing: T,
}

impl<T: Real> DualityCheck<T> {
    pub fn lhs(&self) -> T {
        self.terminal_pairing - self.initial_pairing
    }

    pub fn rhs(&self) -> T {
        self.drift_pairing + self.diffusion_pairing
    }

    /// Residual relative to the largest individual pairing.
    pub fn relative_residual(&self) -> T {
        let scale = self
            .terminal_pairing
            .abs()
            .max(self.initial_pairing.abs())
            .max(self.drift_pairing.abs())
            .max(self.diffusion_pairing.abs());
        if scale == T::zero() {
            T::zero()
        } else {
            (self.lhs() - self.rhs()).abs() / scale
        }
    }
}

pub fn duality_check<T: Real>(
    mesh: &Mesh,
    tree: &ScenarioTree<T>,
    y0: &[T],
    controls: &ControlPair<T>,
    forward: &ForwardSolution<T>,
    backward: &BackwardSolution<T>,
) -> DualityCheck<T> {
    let depth = tree.depth();
    DualityCheck {
        terminal_pairing: forward.y.level_inner(&backward.z, depth, mesh, tree),
        initial_pairing: mesh.inner(y0, backward.z0()),
        drift_pairing: controls.u().time_inner(
            &backward.zeta,
            Some(controls.region().mask()),
            mesh,
            tree,
        ),
        diffusion_pairing: controls.v().time_inner(&backward.big_z, None, mesh, tree),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn normal_field(n: usize, levels: usize, rng: &mut ChaCha8Rng) -> AdaptedField<f64> {
        AdaptedField::from_fn(n, levels, |_, _, out| {
            for v in out {
                *v = StandardNormal.sample(rng);
            }
        })
    }

    #[test]
    fn constant_children_give_zero_integrand() {
        let mesh = Mesh::new(6).unwrap();
        let dt = 0.1;
        let c = vec![2.0; 6];
        let zero = vec![0.0; 6];
        let (z, zeta, big_z) = backward_step(&mesh, dt, &c, &c, &zero, &zero).unwrap();
        assert!(big_z.iter().all(|&v| v == 0.0));
        let expected = crate::calc::ImplicitOperator::new(&mesh, dt, &zero)
            .unwrap()
            .solve_transpose(&c)
            .unwrap();
        assert_eq!(z, expected);
        assert_eq!(zeta, expected);
    }

    #[test]
    fn zero_terminal_gives_zero_solution() {
        let mesh = Mesh::new(5).unwrap();
        let tree = ScenarioTree::new(4, 1.0).unwrap();
        let coeffs = Coefficients::constant(&mesh, &tree, 0.5, 0.5);
        let sol = solve_backward(&mesh, &tree, &coeffs, &LeafField::zeros(&tree, &mesh)).unwrap();
        assert_eq!(sol.z.max_abs(), 0.0);
        assert_eq!(sol.big_z.max_abs(), 0.0);
    }

    #[test]
    fn one_level_duality_by_hand() {
        // N = 2, depth 1, no coefficients: the implicit matrix is
        // [[1+2r, -r], [-r, 1+2r]] with r = dt/h^2.
        let mesh = Mesh::new(2).unwrap();
        let tree = ScenarioTree::new(1, 0.5).unwrap();
        let coeffs = Coefficients::zero(&mesh, &tree);
        let region = Region::full(&mesh);
        let y0 = [1.0, -2.0];
        let u = AdaptedField::from_fn(2, 1, |_, _, o| o.copy_from_slice(&[0.5, 0.25]));
        let v = AdaptedField::from_fn(2, 1, |_, _, o| o.copy_from_slice(&[-1.0, 3.0]));
        let controls = ControlPair::new(u, v, region).unwrap();
        let fwd = solve_forward(&mesh, &tree, &coeffs, &y0, Some(&controls)).unwrap();

        let z_t = LeafField::from_vec(&tree, &mesh, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let bwd = solve_backward(&mesh, &tree, &coeffs, &z_t).unwrap();

        // hand computation of the 2x2 inverse
        let r = 0.5 / (1.0_f64 / 9.0);
        let (d, o) = (1.0 + 2.0 * r, -r);
        let det = d * d - o * o;
        let inv = |b: [f64; 2]| [(d * b[0] - o * b[1]) / det, (d * b[1] - o * b[0]) / det];
        let sq = 0.5_f64.sqrt();
        let rhs_up = [1.0 + 0.5 * 0.5 - sq, -2.0 + 0.5 * 0.25 + 3.0 * sq];
        let rhs_down = [1.0 + 0.5 * 0.5 + sq, -2.0 + 0.5 * 0.25 - 3.0 * sq];
        let (y_up, y_down) = (inv(rhs_up), inv(rhs_down));
        assert!((fwd.y.node(1, 0)[0] - y_up[0]).abs() < 1e-14);
        assert!((fwd.y.node(1, 1)[1] - y_down[1]).abs() < 1e-14);

        let h = 1.0 / 3.0;
        let lhs = 0.5 * h * (y_up[0] * 1.0 + y_down[1] * 2.0)
            - h * (y0[0] * bwd.z0()[0] + y0[1] * bwd.z0()[1]);
        let check = duality_check(&mesh, &tree, &y0, &controls, &fwd, &bwd);
        assert!((check.lhs() - lhs).abs() < 1e-14);
        assert!(check.relative_residual() < 1e-14);
    }

    #[test]
    fn deterministic_terminal_without_noise_coupling() {
        let mesh = Mesh::new(7).unwrap();
        let tree = ScenarioTree::new(5, 1.0).unwrap();
        let coeffs = Coefficients::from_functions(&mesh, &tree, |x, t| x - t, |_, _| 0.0);
        let data: Vec<f64> = mesh
            .interior_coords::<f64>()
            .iter()
            .map(|x| (5.0 * x).sin())
            .collect();
        let sol = solve_backward(
            &mesh,
            &tree,
            &coeffs,
            &LeafField::deterministic(&tree, &data),
        )
        .unwrap();
        assert!(sol.big_z.max_abs() < 1e-15);
        let mut z = data.clone();
        for k in (0..5).rev() {
            z = coeffs
                .operator(&mesh, tree.dt(), k, 0)
                .unwrap()
                .solve_transpose(&z)
                .unwrap();
        }
        assert!(z.iter().zip(sol.z0()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn linear_in_terminal_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = Mesh::new(6).unwrap();
        let tree = ScenarioTree::new(4, 1.0).unwrap();
        let coeffs = Coefficients::adapted_random(&mesh, &tree, 1.0, 1.0, &mut rng);
        let a = LeafField::from_vec(&tree, &mesh, normal_vec(6 * 16, &mut rng)).unwrap();
        let b = LeafField::from_vec(&tree, &mesh, normal_vec(6 * 16, &mut rng)).unwrap();
        let mut ab = a.scaled(2.0);
        ab.axpy(-3.0, &b);
        let sa = solve_backward(&mesh, &tree, &coeffs, &a).unwrap();
        let sb = solve_backward(&mesh, &tree, &coeffs, &b).unwrap();
        let sab = solve_backward(&mesh, &tree, &coeffs, &ab).unwrap();
        let mut comb = sa.z.clone();
        comb.scale(2.0);
        comb.axpy(-3.0, &sb.z);
        let scale = sab.z.max_abs();
        for k in 0..=4 {
            assert!(comb
                .level(k)
                .iter()
                .zip(sab.z.level(k))
                .all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
        }
    }

    #[test]
    fn martingale_reconstruction_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mesh = Mesh::new(5).unwrap();
        let tree = ScenarioTree::new(3, 1.0).unwrap();
        let coeffs = Coefficients::constant(&mesh, &tree, 0.3, 0.0);
        let z_t = LeafField::from_vec(&tree, &mesh, normal_vec(5 * 8, &mut rng)).unwrap();
        let sol = solve_backward(&mesh, &tree, &coeffs, &z_t).unwrap();
        for k in 0..3 {
            for node in 0..tree.nodes_at(k) {
                let op = coeffs.operator(&mesh, tree.dt(), k, node).unwrap();
                for (child, _) in [(2 * node, 0), (2 * node + 1, 1)] {
                    let w = op.solve_transpose(sol.z.node(k + 1, child)).unwrap();
                    for (i, wi) in w.iter().enumerate() {
                        let recon = sol.zeta.node(k, node)[i]
                            + sol.big_z.node(k, node)[i] * tree.increment(child);
                        assert!((recon - wi).abs() < 1e-13);
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn duality_holds_for_random_instances(seed in 0u64..10_000, n in 2usize..12, depth in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = Mesh::new(n).unwrap();
            let tree = ScenarioTree::new(depth, 1.0).unwrap();
            let coeffs = Coefficients::adapted_random(&mesh, &tree, 0.9, 1.5, &mut rng);
            let region = Region::from_interval(&mesh, 0.0, 0.6).unwrap();
            let y0 = normal_vec(n, &mut rng);
            let controls = ControlPair::new(
                normal_field(n, depth, &mut rng),
                normal_field(n, depth, &mut rng),
                region,
            ).unwrap();
            let z_t = LeafField::from_vec(&tree, &mesh, normal_vec(n << depth, &mut rng)).unwrap();
            let fwd = solve_forward(&mesh, &tree, &coeffs, &y0, Some(&controls)).unwrap();
            let bwd = solve_backward(&mesh, &tree, &coeffs, &z_t).unwrap();
            let check = duality_check(&mesh, &tree, &y0, &controls, &fwd, &bwd);
            proptest::prop_assert!(check.relative_residual() <= 1e-10, "{:?}", check);
        }
    }
}
