use condflow::cflow::ConditionalFlow;
use condflow::numerics::RngStream;
use condflow::odeint::TraceMode;
use nalgebra::DMatrix;

fn perturbed_flow(d: usize, l: usize, blocks: usize, seed: u64, scale: f64) -> ConditionalFlow {
    let mut flow = ConditionalFlow::init(d, l, blocks, seed).unwrap();
    let mut p = flow.model.params();
    let noise = RngStream::new(seed).derive(7).gaussian(p.len()).unwrap();
    for (x, n) in p.iter_mut().zip(noise) {
        *x += scale * n;
    }
    flow.model.set_params(&p).unwrap();
    flow.solver.trace_mode = TraceMode::Exact;
    flow.solver.rtol = 1e-10;
    flow.solver.atol = 1e-10;
    flow
}

/// Jacobian of the latent-to-data map by central differences.
fn fd_jacobian(flow: &ConditionalFlow, z: &[f64], a: &[f64], h: f64) -> DMatrix<f64> {
    let d = z.len();
    let mut j = DMatrix::zeros(d, d);
    for c in 0..d {
        let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
        zp[c] += h;
        zm[c] -= h;
        let (wp, wm) = (flow.forward_point(&zp, a).unwrap(), flow.forward_point(&zm, a).unwrap());
        for r in 0..d {
            j[(r, c)] = (wp[r] - wm[r]) / (2.0 * h);
        }
    }
    j
}

#[test]
fn integrated_log_density_change_matches_jacobian_determinant() {
    for seed in 0..4u64 {
        let flow = perturbed_flow(3, 2, 2, seed, 0.4);
        let mut s = RngStream::new(100 + seed);
        let z = s.gaussian(3).unwrap();
        let a = s.gaussian(2).unwrap();
        let (_, dlogp) = flow.forward_map(&z, &a).unwrap();
        let logdet = fd_jacobian(&flow, &z, &a, 1e-4).determinant().abs().ln();
        assert!((dlogp + logdet).abs() < 1e-6, "seed {seed}: dlogp {dlogp} vs -log|det J| {}", -logdet);
    }
}

#[test]
fn reverse_jacobian_inverts_forward_jacobian() {
    let flow = perturbed_flow(4, 1, 2, 9, 0.3);
    let z = RngStream::new(3).gaussian(4).unwrap();
    let a = [0.7];
    let w = flow.forward_point(&z, &a).unwrap();
    let jf = fd_jacobian(&flow, &z, &a, 1e-4);
    let mut jr = DMatrix::zeros(4, 4);
    for c in 0..4 {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[c] += 1e-4;
        wm[c] -= 1e-4;
        let (zp, zm) = (flow.reverse_point(&wp, &a).unwrap(), flow.reverse_point(&wm, &a).unwrap());
        for r in 0..4 {
            jr[(r, c)] = (zp[r] - zm[r]) / 2e-4;
        }
    }
    let err = (&jr * &jf - DMatrix::<f64>::identity(4, 4)).abs().max();
    assert!(err < 1e-6, "max |Jr Jf - I| = {err}");
}
