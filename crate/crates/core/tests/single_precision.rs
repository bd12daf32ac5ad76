//! The numerical core instantiated at `f32`.

use nullctl::backward::{duality_check, solve_backward};
use nullctl::forward::{solve_forward, Coefficients, ControlPair};
use nullctl::tree::{AdaptedField, LeafField, ScenarioTree};
use nullctl::weights::{CarlemanWeights, WeightParams};
use nullctl::{Mesh, Region};

#[test]
fn duality_holds_in_single_precision() {
    let mesh = Mesh::new(6).unwrap();
    let tree = ScenarioTree::<f32>::new(4, 1.0).unwrap();
    let coeffs = Coefficients::constant(&mesh, &tree, 0.4f32, 0.7);
    let n = mesh.n();
    let y0: Vec<f32> = (0..n).map(|i| (i as f32 * 0.7).sin()).collect();
    let field = |phase: f32| {
        AdaptedField::from_fn(n, tree.depth(), |k, node, out| {
            for (i, v) in out.iter_mut().enumerate() {
                *v = (phase + (k * 31 + node * 7 + i) as f32 * 0.37).cos();
            }
        })
    };
    let region = Region::from_interval(&mesh, 0.3, 0.7).unwrap();
    let controls = ControlPair::new(field(0.1), field(1.3), region).unwrap();
    let z_t = LeafField::from_vec(
        &tree,
        &mesh,
        (0..n * tree.leaves())
            .map(|j| (j as f32 * 0.11).sin())
            .collect(),
    )
    .unwrap();
    let fwd = solve_forward(&mesh, &tree, &coeffs, &y0, Some(&controls)).unwrap();
    let bwd = solve_backward(&mesh, &tree, &coeffs, &z_t).unwrap();
    let check = duality_check(&mesh, &tree, &y0, &controls, &fwd, &bwd);
    assert!(
        check.relative_residual() < 1e-5,
        "{}",
        check.relative_residual()
    );
}

#[test]
fn weights_in_single_precision() {
    let mut p = WeightParams::<f32>::new(1.0, 10.0, 2.0, 0.25, (0.4, 0.6), (0.3, 0.7));
    p.x0 = 0.5;
    let w = CarlemanWeights::new(p).unwrap();
    assert!((w.theta(0.0).unwrap() - 3.2).abs() < 1e-6);
    assert!((w.validate_regime(0.01).ratio - 0.4).abs() < 1e-6);
}
