//! Synthetic client and public tasks.
//!
//! A task is a hidden teacher function plus a sampling recipe. Teachers are
//! weighted sums of small random tanh networks; everything is regenerated
//! from seeds, so a [`TaskSpec`] is a complete, serializable description of
//! a client's data distribution.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Batch, LossKind};
use crate::error::{Error, Result};
use crate::seed;

pub const TRAIN_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 1;

/// One additive piece of a teacher: `weight · v·tanh(U·x + c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherComponent {
    pub seed: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: LossKind,
    pub input_dim: usize,
    pub out_dim: usize,
    pub teacher: Vec<TeacherComponent>,
    pub teacher_hidden: usize,
    pub noise_sd: f64,
    /// Mean of the input distribution (per-client covariate shift).
    pub shift: Vec<f64>,
    pub seed: u64,
    /// Shard index; shards of one task draw independent sample streams.
    pub shard: u64,
}

struct TeacherNet {
    u: Vec<f64>,
    c: Vec<f64>,
    v: Vec<f64>,
    weight: f64,
}

impl TeacherNet {
    fn build(comp: &TeacherComponent, input_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let mut rng = seed::rng(comp.seed);
        let gain = 1.5 / (input_dim as f64).sqrt();
        let u = (0..hidden * input_dim).map(|_| gain * rng.sample::<f64, _>(StandardNormal)).collect();
        let c = (0..hidden).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let vs = 1.0 / (hidden as f64).sqrt();
        let v = (0..out_dim * hidden).map(|_| vs * rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            u,
            c,
            v,
            weight: comp.weight,
        }
    }

    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        let hidden = self.c.len();
        let input_dim = x.len();
        let mut h = vec![0.0; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = self.c[j];
            for i in 0..input_dim {
                acc += self.u[j * input_dim + i] * x[i];
            }
            *hj = acc.tanh();
        }
        for (o, y) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..hidden {
                acc += self.v[o * hidden + j] * h[j];
            }
            *y += self.weight * acc;
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.out_dim == 0 || self.teacher_hidden == 0 {
            return Err(Error::Config("task dimensions must be positive".into()));
        }
        if self.shift.len() != self.input_dim {
            return Err(Error::Config(format!(
                "shift has {} entries for input_dim {}",
                self.shift.len(),
                self.input_dim
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        if self.teacher.is_empty() {
            return Err(Error::Config("task needs at least one teacher component".into()));
        }
        Ok(())
    }

    /// Noise-free teacher output for one input row.
    pub fn teacher_output(&self, x: &[f64]) -> Vec<f64> {
        let nets = self.nets();
        let mut y = vec![0.0; self.out_dim];
        for net in &nets {
            net.accumulate(x, &mut y);
        }
        y
    }

    fn nets(&self) -> Vec<TeacherNet> {
        self.teacher
            .iter()
            .map(|c| TeacherNet::build(c, self.input_dim, self.teacher_hidden, self.out_dim))
            .collect()
    }

    /// Draw `n` samples from stream `stream` of this task's shard.
    pub fn sample(&self, n: usize, stream: u64) -> Result<Batch> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("cannot sample an empty batch".into()));
        }
        let nets = self.nets();
        let mut rng = seed::rng(seed::derive(self.seed, &[self.shard, stream]));
        let mut inputs = Vec::with_capacity(n * self.input_dim);
        let mut targets = Vec::with_capacity(n * self.out_dim);
        let mut y = vec![0.0; self.out_dim];
        for _ in 0..n {
            let start = inputs.len();
            for s in &self.shift {
                inputs.push(s + rng.sample::<f64, _>(StandardNormal));
            }
            y.iter_mut().for_each(|v| *v = 0.0);
            for net in &nets {
                net.accumulate(&inputs[start..], &mut y);
            }
            for &clean in &y {
                let noisy = clean + self.noise_sd * rng.sample::<f64, _>(StandardNormal);
                targets.push(match self.kind {
                    LossKind::Regression => noisy,
                    LossKind::BinaryClassification => f64::from(u8::from(noisy > 0.0)),
                });
            }
        }
        Batch::new(inputs, targets, self.input_dim, self.out_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// K shards of one regression task.
    Homogeneous,
    /// K distinct teachers with covariate shift, alternating regression and
    /// classification.
    Heterogeneous,
    /// Shared teacher plus pairwise opposed client-specific components:
    /// clients 2p and 2p+1 add the same component with opposite signs.
    Conflicting,
    /// K clients on the same shard (identical data).
    Consensus,
}

/// Seed of the teacher component shared by every client of a scenario
/// (and mixed into the public task).
pub fn shared_teacher_seed(scenario_seed: u64) -> u64 {
    seed::derive(scenario_seed, &[0])
}

pub fn make_scenario(
    kind: ScenarioKind,
    clients: usize,
    scenario_seed: u64,
    input_dim: usize,
    out_dim: usize,
    noise_sd: f64,
) -> Result<Vec<TaskSpec>> {
    if clients < 2 {
        return Err(Error::Config(format!("a scenario needs K ≥ 2 clients, got {clients}")));
    }
    let shared = TeacherComponent {
        seed: shared_teacher_seed(scenario_seed),
        weight: 1.0,
    };
    let base = |kind, teacher, shift, seed, shard| TaskSpec {
        kind,
        input_dim,
        out_dim,
        teacher,
        teacher_hidden: 8,
        noise_sd,
        shift,
        seed,
        shard,
    };
    let zero_shift = vec![0.0; input_dim];
    let data_seed = seed::derive(scenario_seed, &[1]);
    let specs = match kind {
        ScenarioKind::Homogeneous => (0..clients)
            .map(|k| base(LossKind::Regression, vec![shared], zero_shift.clone(), data_seed, k as u64))
            .collect(),
        ScenarioKind::Consensus => (0..clients)
            .map(|_| base(LossKind::Regression, vec![shared], zero_shift.clone(), data_seed, 0))
            .collect(),
        ScenarioKind::Heterogeneous => {
            let mut rng = seed::rng(seed::derive(scenario_seed, &[2]));
            (0..clients)
                .map(|k| {
                    let kind = if k % 2 == 0 {
                        LossKind::Regression
                    } else {
                        LossKind::BinaryClassification
                    };
                    let teacher = vec![TeacherComponent {
                        seed: seed::derive(scenario_seed, &[3, k as u64]),
                        weight: 1.0,
                    }];
                    let shift = (0..input_dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
                    base(kind, teacher, shift, seed::derive(data_seed, &[k as u64]), 0)
                })
                .collect()
        }
        ScenarioKind::Conflicting => (0..clients)
            .map(|k| {
                let pair = (k / 2) as u64;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let teacher = vec![
                    shared,
                    TeacherComponent {
                        seed: seed::derive(scenario_seed, &[4, pair]),
                        weight: 1.5 * sign,
                    },
                ];
                base(LossKind::Regression, teacher, zero_shift.clone(), seed::derive(data_seed, &[k as u64]), 0)
            })
            .collect(),
    };
    Ok(specs)
}

/// Public, task-agnostic data used for pretraining and block influence:
/// the scenario's shared teacher plus a generic component of its own.
pub fn public_task(scenario_seed: u64, public_seed: u64, input_dim: usize, out_dim: usize) -> TaskSpec {
    TaskSpec {
        kind: LossKind::Regression,
        input_dim,
        out_dim,
        teacher: vec![
            TeacherComponent {
                seed: shared_teacher_seed(scenario_seed),
                weight: 1.0,
            },
            TeacherComponent {
                seed: seed::derive(public_seed, &[0]),
                weight: 0.5,
            },
        ],
        teacher_hidden: 8,
        noise_sd: 0.05,
        shift: vec![0.0; input_dim],
        seed: seed::derive(public_seed, &[1]),
        shard: 0,
    }
}
