//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's numerical paths.

#![allow(dead_code)]

use fedproxy::model::{Architecture, Batch, LossKind, ResidualStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept local so the oracle does not share the library's sampler.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Straight-line forward pass reading parameters by hand-computed offsets.
/// Returns the hidden states of every sample (per block boundary) and the
/// outputs.
pub fn naive_forward(model: &ResidualStack, inputs: &[f64], n: usize) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let a = model.arch();
    let (d, w, o) = (a.input_dim, a.width, a.out_dim);
    let p = model.params().values();
    let e = model.embedding();
    let block = 2 * w * w + 2 * w;
    let mut traces = Vec::new();
    let mut outs = Vec::new();
    for s in 0..n {
        let x = &inputs[s * d..(s + 1) * d];
        let mut h = vec![0.0; w];
        for r in 0..w {
            for c in 0..d {
                h[r] += e[r * d + c] * x[c];
            }
        }
        let mut trace = vec![h.clone()];
        for b in 0..a.blocks {
            let base = b * block;
            let w1 = &p[base..base + w * w];
            let b1 = &p[base + w * w..base + w * w + w];
            let w2 = &p[base + w * w + w..base + 2 * w * w + w];
            let b2 = &p[base + 2 * w * w + w..base + block];
            let mut z = vec![0.0; w];
            for r in 0..w {
                let mut acc = b1[r];
                for c in 0..w {
                    acc += w1[r * w + c] * h[c];
                }
                z[r] = acc.tanh();
            }
            let mut next = h.clone();
            for r in 0..w {
                let mut acc = b2[r];
                for c in 0..w {
                    acc += w2[r * w + c] * z[c];
                }
                next[r] += acc;
            }
            h = next;
            trace.push(h.clone());
        }
        let head = a.blocks * block;
        let hw = &p[head..head + o * w];
        let hb = &p[head + o * w..head + o * w + o];
        let y: Vec<f64> = (0..o)
            .map(|r| hb[r] + (0..w).map(|c| hw[r * w + c] * h[c]).sum::<f64>())
            .collect();
        traces.push(trace);
        outs.push(y);
    }
    (traces, outs)
}

pub fn naive_loss(model: &ResidualStack, batch: &Batch, kind: LossKind) -> f64 {
    let (_, outs) = naive_forward(model, &batch.inputs, batch.n);
    let o = batch.out_dim;
    let mut total = 0.0;
    for (s, y) in outs.iter().enumerate() {
        for k in 0..o {
            let t = batch.targets[s * o + k];
            total += match kind {
                LossKind::Regression => (y[k] - t).powi(2),
                LossKind::BinaryClassification => {
                    // log(1 + e^z) − t·z
                    let z = y[k];
                    z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z
                }
            };
        }
    }
    total / batch.n as f64
}

/// Central finite differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest coordinate-wise relative error, with `floor` guarding
/// coordinates where both values are essentially zero.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Gaussian elimination with partial pivoting on a dense square system.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-14, "singular system");
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Least squares `min ‖M x − y‖²` for a row-major `rows × cols` matrix via
/// the normal equations.
pub fn least_squares(m: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let mut g = vec![vec![0.0; cols]; cols];
    let mut r = vec![0.0; cols];
    for i in 0..rows {
        for a in 0..cols {
            r[a] += m[i * cols + a] * y[i];
            for b in 0..cols {
                g[a][b] += m[i * cols + a] * m[i * cols + b];
            }
        }
    }
    solve(g, r)
}

pub fn random_model(rng: &mut ChaCha8Rng, seed: u64) -> ResidualStack {
    let width = rng.gen_range(2..=8);
    let arch = Architecture {
        input_dim: rng.gen_range(1..=width),
        width,
        out_dim: rng.gen_range(1..=2),
        blocks: rng.gen_range(1..=4),
    };
    ResidualStack::random(arch, seed, 1.0).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, arch: Architecture, kind: LossKind) -> Batch {
    let n = rng.gen_range(1..=16);
    let inputs = (0..n * arch.input_dim).map(|_| gauss(rng)).collect();
    let targets = (0..n * arch.out_dim)
        .map(|_| match kind {
            LossKind::Regression => gauss(rng),
            LossKind::BinaryClassification => f64::from(rng.gen_bool(0.5)),
        })
        .collect();
    Batch::new(inputs, targets, arch.input_dim, arch.out_dim).unwrap()
}

/// Max relative errors of the analytic task, PCR and proximal gradients
/// against central differences on one random instance.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub task: f64,
    pub pcr: f64,
    pub prox: f64,
}

pub const FD_STEP: f64 = 1e-5;
/// The penalties are quadratic, so central differences are exact up to
/// rounding at any step; a wider step keeps cancellation error down.
pub const PENALTY_FD_STEP: f64 = 1e-3;
/// Denominator floor for the relative error. Central differences at step
/// 1e-5 carry about 1e-11·|loss| of cancellation error, so coordinates
/// smaller than this cannot be resolved to 1e-5 relative accuracy and are
/// compared at an absolute 1e-8 instead.
pub const REL_FLOOR: f64 = 1e-3;

pub fn grad_check(seed: u64) -> GradCheck {
    use fedproxy::fedopt::{fedprox_grad, pcr_grad};
    use fedproxy::model::loss_and_grad;

    let mut r = rng(seed);
    let base = random_model(&mut r, seed);
    // Random biases too, so every parameter class is exercised away from zero.
    let values: Vec<f64> = (0..base.params().dim()).map(|_| 0.5 * gauss(&mut r)).collect();
    let model = base.with_params(base.params().with_values(values).unwrap()).unwrap();
    let kind = if seed % 2 == 0 {
        LossKind::Regression
    } else {
        LossKind::BinaryClassification
    };
    let batch = random_batch(&mut r, model.arch(), kind);

    let (_, analytic) = loss_and_grad(&model, &batch, kind).unwrap();
    let at = |x: &[f64]| {
        let m = model.with_params(model.params().with_values(x.to_vec()).unwrap()).unwrap();
        naive_loss(&m, &batch, kind)
    };
    let x = model.params().values().to_vec();
    let numeric = central_diff(at, &x, FD_STEP);
    let task = max_rel_err(analytic.values(), &numeric, REL_FLOOR);

    let dim = x.len();
    let global: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
    let conflict: Vec<f64> = (0..dim).map(|_| r.gen::<f64>()).collect();
    let lambda = r.gen_range(0.1..2.0);
    let mu = r.gen_range(0.1..2.0);
    let g = model.params().with_values(global.clone()).unwrap();

    let pcr_fn = |p: &[f64]| lambda * p.iter().zip(&global).zip(&conflict).map(|((a, b), c)| c * (a - b).powi(2)).sum::<f64>();
    let pcr_a = pcr_grad(model.params(), &g, &conflict, lambda).unwrap();
    let pcr = max_rel_err(pcr_a.values(), &central_diff(pcr_fn, &x, PENALTY_FD_STEP), REL_FLOOR);

    let prox_fn = |p: &[f64]| 0.5 * mu * p.iter().zip(&global).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let prox_a = fedprox_grad(model.params(), &g, mu).unwrap();
    let prox = max_rel_err(prox_a.values(), &central_diff(prox_fn, &x, PENALTY_FD_STEP), REL_FLOOR);

    GradCheck { task, pcr, prox }
}

/// Server-side quantities recomputed from their definitions.
pub struct ServerOracle {
    pub heterogeneity: Vec<f64>,
    pub weights: Vec<f64>,
    pub conflict: Vec<f64>,
}

pub fn server_oracle(tvs: &[Vec<f64>]) -> ServerOracle {
    let k = tvs.len();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let s: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| cos(&tvs[i], &tvs[j])).collect()).collect();
    let heterogeneity: Vec<f64> = (0..k)
        .map(|i| 1.0 - (0..k).filter(|&j| j != i).map(|j| s[i][j].max(0.0)).sum::<f64>() / (k - 1) as f64)
        .collect();
    let consensus: Vec<f64> = (0..k).map(|i| (0..k).filter(|&j| j != i).map(|j| s[i][j].abs()).sum()).collect();
    let z: f64 = consensus.iter().map(|c| c.exp()).sum();
    let weights = consensus.iter().map(|c| c.exp() / z).collect();
    let dim = tvs[0].len();
    let conflict = (0..dim)
        .map(|d| {
            let signs: Vec<f64> = tvs.iter().map(|t| if t[d] > 0.0 { 1.0 } else if t[d] < 0.0 { -1.0 } else { 0.0 }).collect();
            if signs.iter().all(|s| *s == 0.0) {
                0.0
            } else {
                1.0 - signs.iter().sum::<f64>().abs() / k as f64
            }
        })
        .collect();
    ServerOracle {
        heterogeneity,
        weights,
        conflict,
    }
}

/// Keep the entries whose magnitude reaches the `keep`-th largest one.
/// Assumes distinct magnitudes.
pub fn trim_top(v: &[f64], keep: usize) -> Vec<f64> {
    if keep == 0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let cut = mags[keep.min(v.len()) - 1];
    v.iter().map(|&x| if x.abs() >= cut { x } else { 0.0 }).collect()
}

/// Dominant-sign weighted merge written out from its definition.
pub fn hties_oracle(trimmed: &[Vec<f64>], w: &[f64], rho: f64, eps: f64) -> Vec<f64> {
    let dim = trimmed[0].len();
    (0..dim)
        .map(|d| {
            let pos: f64 = trimmed.iter().zip(w).filter(|(t, _)| t[d] > 0.0).map(|(t, w)| w * t[d]).sum();
            let neg: f64 = trimmed.iter().zip(w).filter(|(t, _)| t[d] < 0.0).map(|(t, w)| -w * t[d]).sum();
            if pos / (neg + eps) >= rho {
                pos / trimmed.iter().zip(w).filter(|(t, _)| t[d] > 0.0).map(|(_, w)| w).sum::<f64>()
            } else if neg / (pos + eps) >= rho {
                -neg / trimmed.iter().zip(w).filter(|(t, _)| t[d] < 0.0).map(|(_, w)| w).sum::<f64>()
            } else {
                0.0
            }
        })
        .collect()
}

/// A run small enough for many repetitions in a test.
pub fn small_config(seed: u64) -> fedproxy::harness::RunConfig {
    let mut cfg = fedproxy::harness::RunConfig::default();
    cfg.master_seed = seed;
    cfg.backbone.blocks = 4;
    cfg.backbone.width = 8;
    cfg.backbone.input_dim = 4;
    cfg.public.samples = 64;
    cfg.public.bi_samples = 32;
    cfg.public.pretrain_steps = 40;
    cfg.scenario.clients = 3;
    cfg.rounds = 2;
    cfg.data.train_samples = 32;
    cfg.data.eval_samples = 32;
    cfg
}
