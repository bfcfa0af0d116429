//! Central finite differences against the analytic backward pass.

use latent_clan::numerics::{DenseNet, Rng};

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;

fn objective(net: &DenseNet, x: &[f64], u: &[f64]) -> f64 {
    net.forward(x)
        .unwrap()
        .iter()
        .zip(u)
        .map(|(y, u)| y * u)
        .sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn check(dims: &[usize], seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let net = DenseNet::init(dims, &mut rng.split(0));
    let x = rng.gaussian(dims[0]);
    let u = rng.gaussian(*dims.last().unwrap());
    let (grads, input_grad) = net.backward(&x, &u).unwrap();
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter().copied())
        .collect();

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    let mut flat = 0;
    for ti in 0..analytic_tensor_count(&net) {
        let len = probe.tensors_mut()[ti].len();
        for j in 0..len {
            let orig = probe.tensors_mut()[ti][j];
            probe.tensors_mut()[ti][j] = orig + H;
            let up = objective(&probe, &x, &u);
            probe.tensors_mut()[ti][j] = orig - H;
            let down = objective(&probe, &x, &u);
            probe.tensors_mut()[ti][j] = orig;
            worst = worst.max(rel_err(analytic[flat], (up - down) / (2.0 * H)));
            flat += 1;
        }
    }
    assert_eq!(flat, analytic.len());

    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += H;
        let up = objective(&net, &xp, &u);
        xp[i] -= 2.0 * H;
        let down = objective(&net, &xp, &u);
        worst = worst.max(rel_err(input_grad[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn analytic_tensor_count(net: &DenseNet) -> usize {
    2 * net.layers().len()
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let shapes: [&[usize]; 5] = [
        &[3, 4, 2],
        &[8, 16, 16, 5],
        &[12, 64, 3],
        &[20, 32, 32, 32, 10],
        &[64, 64, 64, 64, 64],
    ];
    for (seed, dims) in shapes.iter().enumerate() {
        let worst = check(dims, seed as u64);
        assert!(
            worst < REL_TOL,
            "net {dims:?} seed {seed}: worst relative error {worst:e}"
        );
    }
}
