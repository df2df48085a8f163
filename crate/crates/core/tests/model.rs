mod common;

use common::*;
use fedproxy::model::{
    forward, forward_with_trace, grad, local_sgd, task_loss, Architecture, Batch, LossKind, ResidualStack, SgdOptions,
};

#[test]
fn forward_matches_straight_line_evaluation() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let model = random_model(&mut r, seed);
        let batch = random_batch(&mut r, model.arch(), LossKind::Regression);
        let trace = forward_with_trace(&model, &batch).unwrap();
        let (hidden, outs) = naive_forward(&model, &batch.inputs, batch.n);
        let w = model.arch().width;
        for (s, sample) in hidden.iter().enumerate() {
            for (i, h) in sample.iter().enumerate() {
                for (c, v) in h.iter().enumerate() {
                    assert!((trace.hidden[i][s * w + c] - v).abs() < 1e-12);
                }
            }
        }
        let flat: Vec<f64> = outs.concat();
        for (a, b) in trace.outputs.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-12);
        }
        for kind in [LossKind::Regression, LossKind::BinaryClassification] {
            let b = random_batch(&mut r, model.arch(), kind);
            let got = task_loss(&model, &b, kind).unwrap();
            assert!((got - naive_loss(&model, &b, kind)).abs() < 1e-12 * got.abs().max(1.0));
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..25 {
        let c = grad_check(seed);
        assert!(c.task < 1e-5, "seed {seed}: task gradient rel err {}", c.task);
        assert!(c.pcr < 1e-6, "seed {seed}: PCR gradient rel err {}", c.pcr);
        assert!(c.prox < 1e-6, "seed {seed}: proximal gradient rel err {}", c.prox);
    }
}

/// A network whose blocks are all zero is linear in the head, so the head
/// gradient has the closed form (2/n)·Xᵀ(X·w + b − y).
#[test]
fn zero_block_head_gradient_is_least_squares_gradient() {
    let mut r = rng(11);
    let arch = Architecture {
        input_dim: 3,
        width: 5,
        out_dim: 1,
        blocks: 2,
    };
    let base = ResidualStack::random(arch, 3, 1.0).unwrap();
    let mut values = vec![0.0; base.params().dim()];
    let head = arch.blocks * arch.block_dim();
    for v in &mut values[head..] {
        *v = gauss(&mut r);
    }
    let model = base.with_params(base.params().with_values(values.clone()).unwrap()).unwrap();
    let n = 9;
    let batch = Batch::new(
        (0..n * 3).map(|_| gauss(&mut r)).collect(),
        (0..n).map(|_| gauss(&mut r)).collect(),
        3,
        1,
    )
    .unwrap();
    let (hidden, _) = naive_forward(&model, &batch.inputs, n);
    let feats: Vec<&Vec<f64>> = hidden.iter().map(|h| h.last().unwrap()).collect();
    let (w, b) = (&values[head..head + 5], values[head + 5]);
    let mut expect = vec![0.0; 6];
    for (s, x) in feats.iter().enumerate() {
        let resid = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() - batch.targets[s];
        for j in 0..5 {
            expect[j] += 2.0 / n as f64 * x[j] * resid;
        }
        expect[5] += 2.0 / n as f64 * resid;
    }
    let g = grad(&model, &batch, LossKind::Regression).unwrap();
    for (a, e) in g.values()[head..].iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

/// From an all-zero start the block weights never move (their gradients
/// vanish), so the network stays affine in the embedded inputs and SGD must
/// land on the ordinary least-squares fit.
#[test]
fn full_batch_sgd_reaches_the_normal_equations_solution() {
    let mut r = rng(5);
    let arch = Architecture {
        input_dim: 3,
        width: 3,
        out_dim: 1,
        blocks: 1,
    };
    let base = ResidualStack::random(arch, 8, 1.0).unwrap();
    let model = base.with_params(base.params().map(|_| 0.0)).unwrap();
    let n = 20;
    let batch = Batch::new(
        (0..n * 3).map(|_| gauss(&mut r)).collect(),
        (0..n).map(|_| gauss(&mut r)).collect(),
        3,
        1,
    )
    .unwrap();
    let opts = SgdOptions {
        steps: 4000,
        lr: 0.1,
        batch_size: n,
        seed: 0,
    };
    let out = local_sgd(&model, &batch, LossKind::Regression, &opts, None).unwrap();

    // Features are the embedded inputs plus a bias column.
    let (hidden, _) = naive_forward(&model, &batch.inputs, n);
    let mut design = Vec::new();
    for h in &hidden {
        design.extend_from_slice(&h[0]);
        design.push(1.0);
    }
    let coef = least_squares(&design, n, 4, &batch.targets);
    let trained = model.with_params(out.params).unwrap();
    let fitted = forward(&trained, &batch).unwrap();
    for (s, y) in fitted.iter().enumerate() {
        let e: f64 = (0..4).map(|j| design[s * 4 + j] * coef[j]).sum();
        assert!((y - e).abs() < 1e-6, "{y} vs {e}");
    }
}

#[test]
fn forward_is_deterministic_and_batch_order_equivariant() {
    let mut r = rng(2);
    let model = random_model(&mut r, 2);
    let batch = random_batch(&mut r, model.arch(), LossKind::Regression);
    let a = forward(&model, &batch).unwrap();
    let perm: Vec<usize> = (0..batch.n).rev().collect();
    let b = forward(&model, &batch.rows(&perm)).unwrap();
    let o = model.arch().out_dim;
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(&a[p * o..(p + 1) * o], &b[i * o..(i + 1) * o]);
    }
    assert_eq!(a, forward(&model, &batch).unwrap());
}
