//! One synchronous communication round.

use serde::Serialize;

use super::analysis::{analyze_round, retention_rate, ServerAnalysis};
use super::config::{AggConfig, ClientConfig, Method};
use super::merge::{apply_update, fedavg_merge, hties_merge, hties_sparsify, ties_merge_baseline};
use super::regularize::{fedprox_grad, pcr_grad};
use crate::error::{Error, Result};
use crate::model::{evaluate, local_sgd, Batch, LossKind, ResidualStack, SgdOptions};
use crate::params::{FlatParams, TaskVector};
use crate::seed;

/// An in-process client: its loss and its private train/held-out data.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub kind: LossKind,
    pub train: Batch,
    pub eval: Batch,
}

/// What the server holds between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedState {
    pub global: FlatParams,
    /// Conflict scores from the previous round; all zero before round 0.
    pub conflict: Vec<f64>,
    pub round: usize,
}

impl FederatedState {
    pub fn initial(global: FlatParams) -> Self {
        let conflict = vec![0.0; global.dim()];
        Self {
            global,
            conflict,
            round: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundMetrics {
    pub client_id: usize,
    /// Loss of the trained client model on its own training data.
    pub task_loss: f64,
    /// Loss of the trained client model on its held-out data.
    pub eval_loss: f64,
    pub heterogeneity: f64,
    pub weight: f64,
    /// Fraction of the task vector kept by the merge.
    pub retention: f64,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    /// Mean over clients of the updated global model's training loss.
    pub global_task_loss: f64,
    /// Mean over clients of the updated global model's held-out loss.
    pub global_eval_loss: f64,
    pub mean_conflict: f64,
    /// Norm of the applied global update.
    pub delta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub state: FederatedState,
    pub metrics: RoundMetrics,
    pub client_params: Vec<FlatParams>,
    pub analysis: ServerAnalysis,
}

/// Local training of one client starting from the round-start global model.
pub fn train_client(
    template: &ResidualStack,
    state: &FederatedState,
    client: &Client,
    method: Method,
    cfg: &ClientConfig,
) -> Result<FlatParams> {
    let model = template.with_params(state.global.clone())?;
    let opts = SgdOptions {
        steps: cfg.steps(client.train.n),
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed: seed::derive(cfg.seed, &[seed::tag::CLIENT_TRAIN, state.round as u64, client.id as u64]),
    };
    let global = &state.global;
    let conflict = &state.conflict;
    let lambda = cfg.lambda_reg;
    let mu = cfg.mu_prox;
    let pcr = move |p: &FlatParams| pcr_grad(p, global, conflict, lambda);
    let prox = move |p: &FlatParams| fedprox_grad(p, global, mu);
    let extra: Option<crate::model::ExtraGrad<'_>> = if method.uses_pcr() && lambda > 0.0 {
        Some(&pcr)
    } else if method.uses_prox() && mu > 0.0 {
        Some(&prox)
    } else {
        None
    };
    local_sgd(&model, &client.train, client.kind, &opts, extra)
        .map(|out| out.params)
        .map_err(|e| e.with_client(client.id))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Server side of a round: analysis plus the configured merge.
#[derive(Debug, Clone)]
pub struct ServerMerge {
    pub global: FlatParams,
    pub analysis: ServerAnalysis,
    /// Fraction of each task vector kept by the merge.
    pub retention: Vec<f64>,
}

/// Analyze the task vectors of one round and merge them into a new global
/// model. `client_params[k]` must equal `global + task_vectors[k]`.
pub fn server_merge(
    global: &FlatParams,
    client_params: &[FlatParams],
    task_vectors: &[TaskVector],
    agg: &AggConfig,
) -> Result<ServerMerge> {
    let k = task_vectors.len();
    if k == 0 || client_params.len() != k {
        return Err(Error::InvalidArgument(format!(
            "merge needs one task vector per client ({} vs {})",
            task_vectors.len(),
            client_params.len()
        )));
    }
    let round = task_vectors[0].round;
    let analysis = if k >= 2 {
        analyze_round(task_vectors, global)?
    } else {
        ServerAnalysis::single(global.dim(), round)
    };
    let uniform = vec![1.0 / k as f64; k];
    let mut retention = vec![1.0; k];
    let new_global = match agg.method {
        Method::Fedproxy | Method::FedproxyNoPcr => {
            let sparse = task_vectors
                .iter()
                .zip(&analysis.heterogeneity_norm)
                .zip(&mut retention)
                .map(|((tv, &h), r)| {
                    *r = retention_rate(agg.r0, agg.delta_adapt, h);
                    hties_sparsify(tv, *r)
                })
                .collect::<Result<Vec<_>>>()?;
            let delta = hties_merge(&sparse, &analysis.weights, agg.rho, agg.eps)?;
            apply_update(global, &delta)?
        }
        Method::Fedavg | Method::Fedprox | Method::FedproxyNoHties => fedavg_merge(client_params, &uniform)?,
        Method::Ties => {
            retention.iter_mut().for_each(|r| *r = agg.ties_density);
            let delta = ties_merge_baseline(task_vectors, agg.ties_density, agg.ties_lambda)?;
            apply_update(global, &delta)?
        }
    };
    Ok(ServerMerge {
        global: new_global,
        analysis,
        retention,
    })
}

/// Distribute, train every client, analyze, merge, update.
///
/// Clients train concurrently; each is a pure function of the round-start
/// state, so results do not depend on scheduling.
pub fn run_round(
    state: &FederatedState,
    template: &ResidualStack,
    clients: &[Client],
    agg: &AggConfig,
    client_cfg: &ClientConfig,
) -> Result<RoundOutput> {
    if clients.is_empty() {
        return Err(Error::InvalidArgument("a round needs at least one client".into()));
    }
    agg.validate()?;
    client_cfg.validate()?;
    let method = agg.method;

    let client_params: Vec<FlatParams> = std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .iter()
            .map(|c| scope.spawn(move || train_client(template, state, c, method, client_cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("client training panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let task_vectors = client_params
        .iter()
        .zip(clients)
        .map(|(p, c)| TaskVector::between(p, &state.global, c.id, state.round))
        .collect::<Result<Vec<_>>>()?;
    let merged = server_merge(&state.global, &client_params, &task_vectors, agg)?;
    let (new_global, analysis, retention) = (merged.global, merged.analysis, merged.retention);
    let k = clients.len();

    let global_model = template.with_params(new_global.clone())?;
    let mut client_metrics = Vec::with_capacity(k);
    let mut global_train = Vec::with_capacity(k);
    let mut global_eval = Vec::with_capacity(k);
    for (i, (c, p)) in clients.iter().zip(&client_params).enumerate() {
        let trained = template.with_params(p.clone())?;
        client_metrics.push(ClientRoundMetrics {
            client_id: c.id,
            task_loss: evaluate(&trained, &c.train, c.kind)?.loss,
            eval_loss: evaluate(&trained, &c.eval, c.kind)?.loss,
            heterogeneity: analysis.heterogeneity[i],
            weight: analysis.weights[i],
            retention: retention[i],
            delta_norm: task_vectors[i].delta.norm(),
        });
        global_train.push(evaluate(&global_model, &c.train, c.kind)?.loss);
        global_eval.push(evaluate(&global_model, &c.eval, c.kind)?.loss);
    }
    let delta_norm = new_global.sub(&state.global)?.norm();
    let metrics = RoundMetrics {
        round: state.round,
        clients: client_metrics,
        global_task_loss: mean(global_train.into_iter()),
        global_eval_loss: mean(global_eval.into_iter()),
        mean_conflict: analysis.mean_conflict(),
        delta_norm,
    };
    let next = FederatedState {
        global: new_global,
        conflict: analysis.conflict.clone(),
        round: state.round + 1,
    };
    Ok(RoundOutput {
        state: next,
        metrics,
        client_params,
        analysis,
    })
}
