use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketch_core::critic::{CriticParams, CriticVariant};
use sketch_core::env::TaskId;
use sketch_core::nn::{log_softmax_at, DenseNet, Parameters};

const STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Input whose hidden pre-activations all stay clear of the ReLU kink.
fn smooth_input(net: &DenseNet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let clear = (0..net.hidden_dim()).all(|h| {
            let z = net.b1()[h] + (0..net.input_dim()).map(|j| net.w1(h, j) * x[j]).sum::<f64>();
            z.abs() > 1e-3
        });
        if clear {
            return x;
        }
    }
}

#[test]
fn policy_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (i, h, o) = (rng.gen_range(1..9), rng.gen_range(1..12), rng.gen_range(2..7));
        let mut net = DenseNet::random(i, h, o, &mut rng);
        for b in net.b1_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        for b in net.b2_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let x = smooth_input(&net, &mut rng);
        let action = rng.gen_range(0..o);
        let scale = rng.gen_range(-3.0..3.0);
        let grad = net.logprob_gradient(&x, action, scale).unwrap();

        let objective = |n: &DenseNet| scale * log_softmax_at(&n.logits(&x).unwrap(), action).unwrap();
        let shapes: Vec<usize> = net.arrays().iter().map(|a| a.len()).collect();
        for (a, &len) in shapes.iter().enumerate() {
            for k in 0..len {
                let mut plus = net.clone();
                plus.arrays_mut()[a][k] += STEP;
                let mut minus = net.clone();
                minus.arrays_mut()[a][k] -= STEP;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
                worst = worst.max(relative_error(grad.arrays[a][k], numeric));
            }
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

#[test]
fn critic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let variant = CriticVariant::ALL[case % 4];
        let dim = rng.gen_range(1..10);
        let tasks = [(TaskId(0), dim), (TaskId(3), dim)];
        let mut critic = CriticParams::with_dims(variant, &tasks).unwrap();
        for block in critic.blocks_mut() {
            for arr in block.arrays_mut() {
                arr.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
        }
        let task = tasks[rng.gen_range(0..2)].0;
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = rng.gen_range(0.0..1.0);
        let grads = critic.gradient(task, &x, q).unwrap();

        let objective = |c: &CriticParams| -0.5 * (q - c.value(task, &x).unwrap()).powi(2);
        for b in 0..critic.blocks().len() {
            let shapes: Vec<usize> = critic.blocks()[b].arrays().iter().map(|a| a.len()).collect();
            for (a, &len) in shapes.iter().enumerate() {
                for k in 0..len {
                    let mut plus = critic.clone();
                    plus.blocks_mut()[b].arrays_mut()[a][k] += STEP;
                    let mut minus = critic.clone();
                    minus.blocks_mut()[b].arrays_mut()[a][k] -= STEP;
                    let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
                    worst = worst.max(relative_error(grads[b].arrays[a][k], numeric));
                }
            }
        }
    }
    assert!(worst <= 1e-6, "max relative error {worst:e}");
}
