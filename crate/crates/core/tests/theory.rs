mod common;

use std::sync::Arc;

use common::*;
use fedproxy::params::{ParamLayout, SubspaceMask};
use fedproxy::theory::{
    check_bound, fusion_error, gap_decomposition, lemma1_check, lipschitz_estimate, quadratic_oracle, random_instance,
    sweep, BoxRegion, Quadratic, SweepConfig,
};
use rand::Rng;

fn random_quadratic(r: &mut rand_chacha::ChaCha8Rng, rows: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let a = (0..rows * dim).map(|_| gauss(r)).collect();
    let b = (0..rows).map(|_| gauss(r)).collect();
    (a, b)
}

fn random_mask(r: &mut rand_chacha::ChaCha8Rng, dim: usize) -> SubspaceMask {
    let mut keep: Vec<bool> = (0..dim).map(|_| r.gen_bool(0.5)).collect();
    keep[r.gen_range(0..dim)] = true;
    SubspaceMask::new(Arc::new(ParamLayout::flat(dim)), keep).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn oracle_matches_gaussian_elimination() {
    let mut r = rng(3);
    for _ in 0..50 {
        let dim = r.gen_range(1..=10);
        let rows = dim + r.gen_range(0..6);
        let (a, b) = random_quadratic(&mut r, rows, dim);
        let theta0: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let mask = random_mask(&mut r, dim);
        let q = Quadratic::new(rows, a.clone(), b.clone()).unwrap();
        let sol = quadratic_oracle(&q, &mask, &theta0).unwrap();

        let full = least_squares(&a, rows, dim, &b);
        assert!(close(&sol.theta_opt, &full, 1e-8));

        // Reduced problem on the kept columns, off-mask dims frozen at θ0.
        let kept: Vec<usize> = (0..dim).filter(|&i| mask.keep()[i]).collect();
        let mut sub = Vec::new();
        let mut target = b.clone();
        for i in 0..rows {
            for &c in &kept {
                sub.push(a[i * dim + c]);
            }
            for c in (0..dim).filter(|c| !mask.keep()[*c]) {
                target[i] -= a[i * dim + c] * theta0[c];
            }
        }
        let x = least_squares(&sub, rows, kept.len(), &target);
        for (j, &c) in kept.iter().enumerate() {
            assert!((sol.phi_opt[c] - x[j]).abs() <= 1e-8 * (1.0 + x[j].abs()));
        }
        for c in (0..dim).filter(|c| !mask.keep()[*c]) {
            assert_eq!(sol.phi_opt[c], theta0[c]);
        }
        assert!(sol.subspace_min_loss >= sol.min_loss - 1e-9);
    }
}

#[test]
fn consistent_target_makes_theta0_optimal() {
    let mut r = rng(4);
    let (dim, rows) = (5, 8);
    let (a, _) = random_quadratic(&mut r, rows, dim);
    let theta0: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
    let b: Vec<f64> = (0..rows).map(|i| (0..dim).map(|c| a[i * dim + c] * theta0[c]).sum()).collect();
    let q = Quadratic::new(rows, a, b).unwrap();
    let sol = quadratic_oracle(&q, &random_mask(&mut r, dim), &theta0).unwrap();
    assert!(close(&sol.theta_opt, &theta0, 1e-9));
    assert!(close(&sol.phi_opt, &theta0, 1e-9));
    assert!(sol.min_loss < 1e-18);
}

#[test]
fn fusion_error_ignores_a_constant_offset() {
    let q = Quadratic::new(2, vec![1.0, 0.0, 0.0, 2.0], vec![1.0, 1.0]).unwrap();
    let theta = [0.3, -0.2];
    let base = fusion_error(|t| q.loss(t), &theta, 0.0).unwrap();
    let shifted = fusion_error(|t| q.loss(t) + 7.5, &theta, 7.5).unwrap();
    assert!((base - shifted).abs() < 1e-12);
}

#[test]
fn decomposition_telescopes_on_random_instances() {
    let mut r = rng(9);
    for _ in 0..100 {
        let dim = r.gen_range(2..=12);
        let rows = dim + r.gen_range(0..4);
        let (a, b) = random_quadratic(&mut r, rows, dim);
        let q = Quadratic::new(rows, a, b).unwrap();
        let theta0: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let mask = random_mask(&mut r, dim);
        let sol = quadratic_oracle(&q, &mask, &theta0).unwrap();
        let mut phi = sol.phi_opt.clone();
        for i in 0..dim {
            if mask.keep()[i] {
                phi[i] += 0.3 * gauss(&mut r);
            }
        }
        let gap = gap_decomposition(|t| q.loss(t), &sol, &phi, &phi);
        assert!((gap.sum() - gap.total).abs() <= 1e-12 * gap.total.abs().max(1.0));
        assert_eq!(gap.t2, 0.0);
        assert!(gap.t3 >= -1e-9);
        assert!(fusion_error(|t| q.loss(t), &phi, sol.min_loss).unwrap() >= 0.0);
    }
}

#[test]
fn lemma1_first_line_and_bound_on_random_vectors() {
    let mut r = rng(12);
    for _ in 0..100 {
        let dim = r.gen_range(1..=16);
        let mask = random_mask(&mut r, dim);
        let theta0: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let phi: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
        let theta_new: Vec<f64> = (0..dim).map(|i| if mask.keep()[i] { phi[i] } else { theta0[i] }).collect();
        let rep = lemma1_check(&theta_new, &phi, &theta0, &mask).unwrap();
        assert!(rep.residual < 1e-12 * rep.distance_sq.max(1.0));
        assert!(rep.bound_holds);
        assert!(rep.off_mask_sq <= rep.bound_side);
    }
}

/// With A = I the gradient norm ‖θ − b‖ is convex in θ, so its supremum over
/// a box is attained at a corner.
#[test]
fn lipschitz_estimate_is_bounded_by_the_corner_supremum() {
    let mut r = rng(6);
    for dim in 1..=8 {
        let b: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..2.0)).collect();
        let grad = |t: &[f64]| t.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        let unit = BoxRegion::new(vec![0.0; dim], vec![1.0; dim]).unwrap();
        let anchors: [&[f64]; 0] = [];
        let est = lipschitz_estimate(grad, &unit, &anchors, 256, dim as u64).unwrap();
        let region = &est.region;
        let mut sup: f64 = 0.0;
        for corner in 0..(1u32 << dim) {
            let p: Vec<f64> = (0..dim)
                .map(|i| if corner >> i & 1 == 1 { region.hi[i] } else { region.lo[i] })
                .collect();
            sup = sup.max(grad(&p).iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        assert!(est.l_hat <= sup + 1e-12, "dim {dim}: {} > {sup}", est.l_hat);
        assert!(est.l_hat > 0.0);
        // The estimate region is the unit box inflated by 10% in total width.
        for i in 0..dim {
            assert!((region.hi[i] - region.lo[i] - 1.1).abs() < 1e-12);
        }
    }
}

#[test]
fn lipschitz_estimate_grows_with_probes() {
    let q = Quadratic::new(3, (0..9).map(|i| (i as f64).sin()).collect(), vec![1.0, -1.0, 0.5]).unwrap();
    let region = BoxRegion::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let anchors: [&[f64]; 0] = [];
    let mut prev = 0.0;
    for n in [2, 4, 16, 64, 256] {
        let l = lipschitz_estimate(|t| q.grad(t), &region, &anchors, n, 5).unwrap().l_hat;
        assert!(l >= prev);
        prev = l;
    }
    assert!(lipschitz_estimate(|t| q.grad(t), &region, &anchors, 1, 5).is_err());
}

#[test]
fn optimal_start_leaves_only_the_suboptimality_term() {
    let mut r = rng(30);
    let (dim, rows) = (6, 9);
    let (a, b) = random_quadratic(&mut r, rows, dim);
    let q = Quadratic::new(rows, a, b).unwrap();
    let layout = Arc::new(ParamLayout::flat(dim));
    let mask = SubspaceMask::from_dims(layout.clone(), &[0, 2, 4]).unwrap();
    let all = SubspaceMask::all(layout.clone());
    let theta_opt = quadratic_oracle(&q, &all, &vec![0.0; dim]).unwrap().theta_opt;
    let theta0 = fedproxy::FlatParams::new(layout.clone(), theta_opt.clone()).unwrap();
    let mut phi = theta_opt.clone();
    phi[2] += 0.1;
    let inst = fedproxy::theory::BoundInstance::measure(
        q,
        mask,
        theta0,
        fedproxy::FlatParams::new(layout, phi).unwrap(),
        0.0,
        32,
        1,
    )
    .unwrap();
    let check = check_bound(&inst);
    assert!((check.rhs - check.delta_sub).abs() < 1e-9);
    assert!(check.holds);
}

#[test]
fn bound_holds_across_dimensions_and_mask_sizes() {
    for dim in [2, 4, 8, 12, 16] {
        for keep_frac in [0.25, 0.5, 0.75] {
            let cfg = SweepConfig {
                dim,
                rows: dim + 4,
                keep_frac,
                count: 20,
                seed: dim as u64,
                ..SweepConfig::default()
            };
            for row in sweep(&cfg).unwrap() {
                let c = &row.check;
                assert!(c.holds, "dim {dim} keep {keep_frac} #{}: {} > {}", row.index, c.lhs, c.rhs);
                assert!((c.gap.sum() - c.lhs).abs() <= 1e-12 * c.lhs.abs().max(1.0));
            }
        }
    }
}

#[test]
fn sweep_instances_are_deterministic() {
    let cfg = SweepConfig::default();
    assert_eq!(random_instance(&cfg, 3).unwrap(), random_instance(&cfg, 3).unwrap());
    assert_ne!(random_instance(&cfg, 3).unwrap(), random_instance(&cfg, 4).unwrap());
}
