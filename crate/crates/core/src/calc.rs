//! Difference and average operators on the primal/dual mesh pair, the
//! discrete Leibniz and summation-by-parts identities, and the tridiagonal
//! solver behind the drift-implicit time steps.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Real values on the closure `x_0, ..., x_{N+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<T> {
    values: Vec<T>,
}

/// Real values on the star mesh `x_j + h/2`, `j = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualGridFunction<T> {
    values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(mesh: &Mesh, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.n() + 2 {
            return Err(Error::invalid(format!(
                "grid function needs {} closure values, got {}",
                mesh.n() + 2,
                values.len()
            )));
        }
        Ok(Self { values })
    }

    /// Lifts interior values with homogeneous Dirichlet boundary values.
    pub fn from_interior(interior: &[T]) -> Self {
        let mut values = Vec::with_capacity(interior.len() + 2);
        values.push(T::zero());
        values.extend_from_slice(interior);
        values.push(T::zero());
        Self { values }
    }

    pub fn sample(mesh: &Mesh, f: impl Fn(T) -> T) -> Self {
        Self {
            values: mesh.closure_coords().into_iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn interior(&self) -> &[T] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn n(&self) -> usize {
        self.values.len() - 2
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        max_abs(&self.values)
    }
}

impl<T: Real> DualGridFunction<T> {
    pub fn new(mesh: &Mesh, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.n() + 1 {
            return Err(Error::invalid(format!(
                "dual grid function needs {} star values, got {}",
                mesh.n() + 1,
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn sample(mesh: &Mesh, f: impl Fn(T) -> T) -> Self {
        Self {
            values: mesh.star_coords().into_iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        max_abs(&self.values)
    }
}

pub(crate) fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// `D_h u` on the star mesh.
pub fn apply_dh<T: Real>(h: T, u: &GridFunction<T>) -> DualGridFunction<T> {
    DualGridFunction {
        values: u.values.windows(2).map(|w| (w[1] - w[0]) / h).collect(),
    }
}

/// `A_h u` on the star mesh.
pub fn apply_ah<T: Real>(u: &GridFunction<T>) -> DualGridFunction<T> {
    let half = T::lit(0.5);
    DualGridFunction {
        values: u.values.windows(2).map(|w| (w[1] + w[0]) * half).collect(),
    }
}

/// `D_h v` for a star-mesh function, landing on the interior points.
pub fn apply_dh_dual<T: Real>(h: T, v: &DualGridFunction<T>) -> Vec<T> {
    v.values.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

/// `A_h v` for a star-mesh function, landing on the interior points.
pub fn apply_ah_dual<T: Real>(v: &DualGridFunction<T>) -> Vec<T> {
    let half = T::lit(0.5);
    v.values.windows(2).map(|w| (w[1] + w[0]) * half).collect()
}

/// Three-point second difference `D_h^2 u` at the interior points.
pub fn apply_dh2<T: Real>(h: T, u: &GridFunction<T>) -> Vec<T> {
    let inv_h2 = (h * h).recip();
    u.values
        .windows(3)
        .map(|w| (w[2] - w[1] - w[1] + w[0]) * inv_h2)
        .collect()
}

/// `D_h^2` on interior values with zero Dirichlet data, written into `out`.
pub fn laplacian_dirichlet<T: Real>(h: T, u: &[T], out: &mut [T]) {
    let n = u.len();
    let inv_h2 = (h * h).recip();
    for i in 0..n {
        let left = if i > 0 { u[i - 1] } else { T::zero() };
        let right = if i + 1 < n { u[i + 1] } else { T::zero() };
        out[i] = (right - u[i] - u[i] + left) * inv_h2;
    }
}

/// Max-abs residuals of the three discrete product/average identities:
/// `D_h(uv) = D_h u A_h v + A_h u D_h v` and
/// `A_h(uv) = A_h u A_h v + h²/4 D_h u D_h v` on the star mesh, and
/// `u = A_h² u - h²/4 D_h² u` on the interior.
pub fn leibniz_residuals<T: Real>(h: T, u: &GridFunction<T>, v: &GridFunction<T>) -> (T, T, T) {
    let quarter_h2 = h * h / T::lit(4.0);
    let uv = u.mul(v);
    let (du, dv) = (apply_dh(h, u), apply_dh(h, v));
    let (au, av) = (apply_ah(u), apply_ah(v));

    let d_uv = apply_dh(h, &uv);
    let d_rhs: Vec<T> = (0..du.values.len())
        .map(|j| du.values[j] * av.values[j] + au.values[j] * dv.values[j])
        .collect();

    let a_uv = apply_ah(&uv);
    let a_rhs: Vec<T> = (0..du.values.len())
        .map(|j| au.values[j] * av.values[j] + quarter_h2 * du.values[j] * dv.values[j])
        .collect();

    let a2u = apply_ah_dual(&au);
    let d2u = apply_dh2(h, u);
    let recon: Vec<T> = a2u
        .iter()
        .zip(&d2u)
        .map(|(&a, &d)| a - quarter_h2 * d)
        .collect();

    (
        max_abs_diff(&d_uv.values, &d_rhs),
        max_abs_diff(&a_uv.values, &a_rhs),
        max_abs_diff(u.interior(), &recon),
    )
}

/// Residuals of the two summation-by-parts formulas on the interior mesh
/// for `u` on the closure and `v` on the star mesh:
///
/// `∫_M u D_h v = -∫_{M*} D_h u v + ∫_{∂M} u t_r(v) ν` and
/// `∫_M u A_h v = ∫_{M*} A_h u v - h/2 ∫_{∂M} u t_r(v)`.
pub fn ibp_residuals<T: Real>(mesh: &Mesh, u: &GridFunction<T>, v: &DualGridFunction<T>) -> (T, T) {
    let h = mesh.h::<T>();
    let ui = u.interior();
    let sum_h = |a: &[T], b: &[T]| h * a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();

    let dv = apply_dh_dual(h, v);
    let av = apply_ah_dual(v);
    let du = apply_dh(h, u);
    let au = apply_ah(u);

    let n = u.values.len();
    let boundary = mesh.boundary();
    let u_at = |b: &crate::mesh::BoundarySample| {
        if b.half_index == 0 {
            u.values[0]
        } else {
            u.values[n - 1]
        }
    };
    let mut flux = T::zero();
    let mut trace = T::zero();
    for b in &boundary {
        let tr = b.trace_of(&v.values);
        let nu = T::from_i8(b.normal).unwrap();
        flux = flux + u_at(b) * tr * nu;
        trace = trace + u_at(b) * tr;
    }

    let r1 = sum_h(ui, &dv) - (-sum_h(&du.values, &v.values) + flux);
    let r2 = sum_h(ui, &av) - (sum_h(&au.values, &v.values) - h / T::lit(2.0) * trace);
    (r1.abs(), r2.abs())
}

/// Evaluates `A_h^m D_h^n f` at `x` for a function defined on the whole line,
/// by expanding the operator into shifts `f(x + k h/2)`.
pub fn apply_average_difference<T: Real>(
    h: T,
    averages: usize,
    differences: usize,
    f: impl Fn(T) -> T,
    x: T,
) -> T {
    let reach = averages + differences;
    // coefficient of f(x + (k - reach) h/2)
    let mut coeffs = vec![T::zero(); 2 * reach + 1];
    coeffs[reach] = T::one();
    let half = T::lit(0.5);
    let inv_h = h.recip();
    let ops = std::iter::repeat_n(true, averages).chain(std::iter::repeat_n(false, differences));
    for is_average in ops {
        let mut next = vec![T::zero(); coeffs.len()];
        for k in 0..coeffs.len() {
            let c = coeffs[k];
            if c == T::zero() {
                continue;
            }
            if is_average {
                next[k + 1] = next[k + 1] + c * half;
                next[k - 1] = next[k - 1] + c * half;
            } else {
                next[k + 1] = next[k + 1] + c * inv_h;
                next[k - 1] = next[k - 1] - c * inv_h;
            }
        }
        coeffs = next;
    }
    let half_h = h * half;
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != T::zero())
        .map(|(k, &c)| {
            let offset = T::from_i64(k as i64 - reach as i64).unwrap() * half_h;
            c * f(x + offset)
        })
        .sum()
}

/// Max over mesh points in `[lo, hi]` of `|A_h^m D_h^n f - f^{(n)}|`.
pub fn consistency_error<T: Real>(
    mesh: &Mesh,
    averages: usize,
    differences: usize,
    f: impl Fn(T) -> T,
    derivative: impl Fn(T) -> T,
    window: (T, T),
) -> T {
    let h = mesh.h::<T>();
    let mut err = T::zero();
    for x in mesh.closure_coords::<T>() {
        if x < window.0 || x > window.1 {
            continue;
        }
        let approx = apply_average_difference(h, averages, differences, &f, x);
        err = err.max((approx - derivative(x)).abs());
    }
    err
}

/// General tridiagonal matrix with sub-, main and super-diagonals.
#[derive(Clone, Debug)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> Tridiagonal<T> {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc = acc + self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc = acc + self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    /// Thomas elimination without pivoting. Returns `None` on a vanishing pivot.
    pub fn solve_in_place(&self, rhs: &mut [T]) -> Option<()> {
        let n = self.n();
        if n == 0 {
            return Some(());
        }
        let tiny = T::epsilon() * T::lit(16.0);
        let mut c = vec![T::zero(); n];
        let mut pivot = self.diag[0];
        if pivot.abs() <= tiny {
            return None;
        }
        if n > 1 {
            c[0] = self.upper[0] / pivot;
        }
        rhs[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if pivot.abs() <= tiny || !pivot.is_finite() {
                return None;
            }
            if i + 1 < n {
                c[i] = self.upper[i] / pivot;
            }
            rhs[i] = (rhs[i] - self.lower[i - 1] * rhs[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            rhs[i] = rhs[i] - c[i] * rhs[i + 1];
        }
        Some(())
    }
}

/// `M = I - dt (D_h² + diag(a1))` with homogeneous Dirichlet elimination.
#[derive(Clone, Debug)]
pub struct ImplicitOperator<T> {
    matrix: Tridiagonal<T>,
    dt: T,
    h: T,
    a1_bound: T,
}

impl<T: Real> ImplicitOperator<T> {
    pub fn new(mesh: &Mesh, dt: T, a1: &[T]) -> Result<Self> {
        if dt < T::zero() {
            return Err(Error::invalid(format!(
                "time step must be nonnegative, got {dt}"
            )));
        }
        let n = mesh.n();
        if a1.len() != n {
            return Err(Error::invalid(format!(
                "a1 has {} values, mesh has {n} interior points",
                a1.len()
            )));
        }
        let h = mesh.h::<T>();
        let r = dt / (h * h);
        let two = T::lit(2.0);
        Ok(Self {
            matrix: Tridiagonal {
                lower: vec![-r; n - 1],
                diag: a1.iter().map(|&a| T::one() + two * r - dt * a).collect(),
                upper: vec![-r; n - 1],
            },
            dt,
            h,
            a1_bound: max_abs(a1),
        })
    }

    pub fn matrix(&self) -> &Tridiagonal<T> {
        &self.matrix
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.matrix.apply(x)
    }

    fn singular(&self) -> Error {
        Error::SingularSystem {
            dt: self.dt.to_f64_lossy(),
            h: self.h.to_f64_lossy(),
            a1_bound: self.a1_bound.to_f64_lossy(),
        }
    }

    /// Solves `M x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [T]) -> Result<()> {
        self.matrix
            .solve_in_place(rhs)
            .ok_or_else(|| self.singular())
    }

    /// Solves `Mᵀ x = rhs` in place.
    pub fn solve_transpose_in_place(&self, rhs: &mut [T]) -> Result<()> {
        self.matrix
            .transpose()
            .solve_in_place(rhs)
            .ok_or_else(|| self.singular())
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_transpose(&self, rhs: &[T]) -> Result<Vec<T>> {
        let mut x = rhs.to_vec();
        self.solve_transpose_in_place(&mut x)?;
        Ok(x)
    }
}

/// One-shot `(I - dt (D_h² + a1)) x = rhs`.
pub fn solve_drift_implicit<T: Real>(mesh: &Mesh, dt: T, a1: &[T], rhs: &[T]) -> Result<Vec<T>> {
    ImplicitOperator::new(mesh, dt, a1)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh(n: usize) -> Mesh {
        Mesh::new(n).unwrap()
    }

    #[test]
    fn dh_examples() {
        let m = mesh(3);
        let h = m.h::<f64>();
        let lin = GridFunction::sample(&m, |x| x);
        assert!(apply_dh(h, &lin)
            .values()
            .iter()
            .all(|&d| (d - 1.0).abs() < 1e-15));
        let sq = GridFunction::sample(&m, |x| x * x);
        assert!((apply_dh(h, &sq).values()[1] - 0.75).abs() < 1e-15);
        let c = GridFunction::sample(&m, |_| 3.0);
        assert!(apply_dh(h, &c).values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn ah_examples() {
        let m = mesh(3);
        let c = GridFunction::sample(&m, |_| 3.0);
        assert!(apply_ah(&c).values().iter().all(|&a| a == 3.0));
        let lin = GridFunction::sample(&m, |x| x);
        let star = m.star_coords::<f64>();
        assert!(apply_ah(&lin)
            .values()
            .iter()
            .zip(&star)
            .all(|(a, x): (&f64, &f64)| (a - x).abs() < 1e-15));
        let sq = GridFunction::sample(&m, |x| x * x);
        let a: f64 = apply_ah(&sq).values()[1];
        assert!((a - 0.15625).abs() < 1e-15);
        assert!((a - (0.375 * 0.375 + 0.25 * 0.25 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn dh2_examples() {
        let m = mesh(5);
        let h = m.h::<f64>();
        let sq = GridFunction::sample(&m, |x| x * x);
        assert!(apply_dh2(h, &sq).iter().all(|&d| (d - 2.0).abs() < 1e-11));
        let lin = GridFunction::sample(&m, |x| x);
        assert!(apply_dh2(h, &lin).iter().all(|&d| d.abs() < 1e-11));

        // hat function at x_3 reads out the stencil row (1, -2, 1)/h^2
        let mut hat = vec![0.0; 7];
        hat[3] = 1.0;
        let d2 = apply_dh2(h, &GridFunction::new(&m, hat).unwrap());
        let inv = 1.0 / (h * h);
        assert_eq!(d2, vec![0.0, inv, -2.0 * inv, inv, 0.0]);

        // D_h applied twice equals the three-point stencil
        let u = GridFunction::sample(&m, |x: f64| (3.0 * x).sin());
        let twice = apply_dh_dual(h, &apply_dh(h, &u));
        assert!(max_abs_diff(&twice, &apply_dh2(h, &u)) < 1e-12);
    }

    #[test]
    fn laplacian_matches_closure_operator() {
        let m = mesh(6);
        let h = m.h::<f64>();
        let u = [0.3, -1.0, 2.0, 0.5, 0.1, -0.7];
        let mut out = [0.0; 6];
        laplacian_dirichlet(h, &u, &mut out);
        assert_eq!(out.to_vec(), apply_dh2(h, &GridFunction::from_interior(&u)));
    }

    #[test]
    fn leibniz_examples() {
        let m = mesh(8);
        let h = m.h::<f64>();
        let x = GridFunction::sample(&m, |x| x);
        let (a, b, c) = leibniz_residuals(h, &x, &x);
        assert!(a < 1e-13 && b < 1e-13 && c < 1e-13);
        let zero = GridFunction::sample(&m, |_| 0.0);
        let (a, b, _) = leibniz_residuals(h, &x, &zero);
        assert_eq!((a, b), (0.0, 0.0));
        let (a, b, c) = leibniz_residuals(h, &zero, &zero);
        assert_eq!((a, b, c), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ibp_examples() {
        let m = mesh(6);
        let one = GridFunction::sample(&m, |_| 1.0);
        let one_star = DualGridFunction::sample(&m, |_| 1.0);
        let (r1, r2) = ibp_residuals(&m, &one, &one_star);
        assert!(r1 < 1e-15 && r2 < 1e-15);
        let zero = GridFunction::sample(&m, |_| 0.0);
        let v = DualGridFunction::sample(&m, |x: f64| x.exp());
        assert_eq!(ibp_residuals(&m, &zero, &v), (0.0, 0.0));
    }

    #[test]
    fn dh2_symmetric_with_dirichlet_data() {
        let m = mesh(16);
        let h = m.h::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (mut lu, mut lw) = (vec![0.0; 16], vec![0.0; 16]);
            laplacian_dirichlet(h, &u, &mut lu);
            laplacian_dirichlet(h, &w, &mut lw);
            let scale = (max_abs(&lu) + max_abs(&lw)) * m.h::<f64>() * 16.0;
            assert!((m.inner(&lu, &w) - m.inner(&u, &lw)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn implicit_solve_round_trip() {
        let m = mesh(12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dt = 0.1;
        let a1 = vec![0.0; 12];
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = ImplicitOperator::new(&m, dt, &a1).unwrap();
        let rhs = op.apply(&w);
        let x = op.solve(&rhs).unwrap();
        assert!(max_abs_diff(&x, &w) <= 1e-12 * max_abs(&w));

        let rhs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(solve_drift_implicit(&m, 0.0, &a1, &rhs).unwrap(), rhs);

        let a1: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let op = ImplicitOperator::new(&m, dt, &a1).unwrap();
        let plain = op.solve(&rhs).unwrap();
        let transposed = op.solve_transpose(&rhs).unwrap();
        assert!(max_abs_diff(&plain, &transposed) < 1e-13);
    }

    #[test]
    fn transposed_solve_of_nonsymmetric_matrix() {
        let t = Tridiagonal {
            lower: vec![1.0, -0.5],
            diag: vec![4.0, 5.0, 3.0],
            upper: vec![0.25, 2.0],
        };
        let x = [1.0, -2.0, 0.5];
        let mut b = t.transpose().apply(&x);
        t.transpose().solve_in_place(&mut b).unwrap();
        assert!(max_abs_diff(&b, &x) < 1e-14);
    }

    #[test]
    fn singular_pivot_is_reported() {
        let m = mesh(4);
        // dt * a1 = 1 + 2r makes the first pivot vanish
        let dt = 0.01;
        let h = m.h::<f64>();
        let a = (1.0 + 2.0 * dt / (h * h)) / dt;
        let op = ImplicitOperator::new(&m, dt, &[a, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            op.solve(&[1.0; 4]),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn shift_expansion_matches_grid_operators() {
        let m = mesh(10);
        let h = m.h::<f64>();
        let f = |x: f64| (2.0 * x).cos() + x * x * x;
        let u = GridFunction::sample(&m, f);
        let x4 = m.x::<f64>(4);
        let d2 = apply_dh2(h, &u)[3];
        assert!((apply_average_difference(h, 0, 2, f, x4) - d2).abs() < 1e-11);
        let a2 = apply_ah_dual(&apply_ah(&u))[3];
        assert!((apply_average_difference(h, 2, 0, f, x4) - a2).abs() < 1e-14);
        let ad = apply_ah_dual(&apply_dh(h, &u))[3];
        assert!((apply_average_difference(h, 1, 1, f, x4) - ad).abs() < 1e-12);
    }

    #[test]
    fn second_order_consistency() {
        use std::f64::consts::PI;
        type Case = (usize, usize, fn(f64) -> f64);
        let cases: [Case; 4] = [
            (0, 1, |x| PI * (PI * x).cos()),
            (0, 2, |x| -PI * PI * (PI * x).sin()),
            (1, 1, |x| PI * (PI * x).cos()),
            (2, 0, |x| (PI * x).sin()),
        ];
        for (a, d, exact) in cases {
            let e1 = consistency_error(
                &mesh(15),
                a,
                d,
                |x: f64| (PI * x).sin(),
                exact,
                (0.25, 0.75),
            );
            let e2 = consistency_error(
                &mesh(31),
                a,
                d,
                |x: f64| (PI * x).sin(),
                exact,
                (0.25, 0.75),
            );
            let order = (e1 / e2).log2();
            assert!((order - 2.0).abs() < 0.15, "({a},{d}) order {order}");
        }
    }

    proptest::proptest! {
        #[test]
        fn identities_hold_for_random_pairs(
            u in proptest::collection::vec(-5.0f64..5.0, 18),
            v in proptest::collection::vec(-5.0f64..5.0, 18),
        ) {
            let m = mesh(16);
            let h = m.h::<f64>();
            let (gu, gv) = (GridFunction::new(&m, u.clone()).unwrap(), GridFunction::new(&m, v).unwrap());
            let scale = (1.0 + gu.max_abs()) * (1.0 + gv.max_abs()) / h;
            let (a, b, c) = leibniz_residuals(h, &gu, &gv);
            proptest::prop_assert!(a <= 1e-12 * scale && b <= 1e-12 * scale && c <= 1e-12 * scale);
            let dual = DualGridFunction::new(&m, u[..17].to_vec()).unwrap();
            let (r1, r2) = ibp_residuals(&m, &gu, &dual);
            proptest::prop_assert!(r1 <= 1e-12 * scale && r2 <= 1e-12 * scale);
        }
    }
}
