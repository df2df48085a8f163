use serde::Serialize;

use super::config::{RunConfig, RunSeeds};
use crate::compression::{
    block_influence, estimate_distortion, extract_proxy, select_mask, BlockInfluenceReport, Correspondence, PruneMask,
};
use crate::error::{Error, Result};
use crate::fedopt::{run_round, Client, ClientConfig, FederatedState, Method, RoundMetrics};
use crate::fusion::plug_in_fuse;
use crate::model::{
    evaluate, local_sgd, make_scenario, public_task, LossKind, ResidualStack, SgdOptions, TaskSpec, EVAL_STREAM,
    TRAIN_STREAM,
};
use crate::params::FlatParams;

/// Public-data stream used for block influence and distortion, disjoint from
/// the pretraining stream.
const PROBE_STREAM: u64 = 2;

/// Everything that precedes federated training: pretrained backbone,
/// compression, and client data. Shared by every method of a comparison.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seeds: RunSeeds,
    pub backbone: ResidualStack,
    pub public: TaskSpec,
    pub pretrain_loss: f64,
    pub block_influence: BlockInfluenceReport,
    pub mask: PruneMask,
    pub proxy: ResidualStack,
    pub correspondence: Correspondence,
    pub tasks: Vec<TaskSpec>,
    pub clients: Vec<Client>,
}

/// Client tasks of a run. Single-client runs take the first task of a
/// two-client scenario.
pub fn scenario_tasks(cfg: &RunConfig, seeds: &RunSeeds) -> Result<Vec<TaskSpec>> {
    let k = cfg.scenario.clients;
    let mut tasks = make_scenario(
        cfg.scenario.kind,
        k.max(2),
        seeds.scenario,
        cfg.backbone.input_dim,
        cfg.backbone.out_dim,
        cfg.scenario.noise_sd,
    )?;
    tasks.truncate(k);
    Ok(tasks)
}

pub fn build_clients(cfg: &RunConfig, tasks: &[TaskSpec]) -> Result<Vec<Client>> {
    tasks
        .iter()
        .enumerate()
        .map(|(id, t)| {
            Ok(Client {
                id,
                kind: t.kind,
                train: t.sample(cfg.data.train_samples, TRAIN_STREAM)?,
                eval: t.sample(cfg.data.eval_samples, EVAL_STREAM)?,
            })
        })
        .collect()
}

/// Random backbone pretrained on the public task.
pub fn pretrained_backbone(cfg: &RunConfig, seeds: &RunSeeds, public: &TaskSpec) -> Result<(ResidualStack, f64)> {
    let init = ResidualStack::random(cfg.backbone.arch(), seeds.backbone, cfg.backbone.init_scale)?;
    let data = public.sample(cfg.public.samples, TRAIN_STREAM)?;
    let opts = SgdOptions {
        steps: cfg.public.pretrain_steps,
        lr: cfg.public.pretrain_lr,
        batch_size: cfg.public.batch_size,
        seed: seeds.pretrain,
    };
    let out = local_sgd(&init, &data, public.kind, &opts, None)?;
    let model = init.with_params(out.params)?;
    let loss = evaluate(&model, &data, public.kind)?.loss;
    Ok((model, loss))
}

/// A backbone of the configured architecture with the given parameters.
/// The frozen embedding is regenerated from the backbone seed.
pub fn backbone_from_params(cfg: &RunConfig, params: FlatParams) -> Result<ResidualStack> {
    let seeds = cfg.seeds();
    ResidualStack::random(cfg.backbone.arch(), seeds.backbone, cfg.backbone.init_scale)?.with_params(params)
}

/// Compress an already pretrained backbone.
pub fn compress(
    cfg: &RunConfig,
    backbone: &ResidualStack,
    public: &TaskSpec,
) -> Result<(BlockInfluenceReport, PruneMask, ResidualStack, Correspondence)> {
    let report = block_influence(backbone, public, cfg.public.bi_samples, PROBE_STREAM)?;
    let mask = select_mask(&report, cfg.kappa)?;
    let (proxy, corr) = extract_proxy(backbone, &mask)?;
    Ok((report, mask, proxy, corr))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let public = public_task(seeds.scenario, seeds.public, cfg.backbone.input_dim, cfg.backbone.out_dim);
    let (backbone, pretrain_loss) = pretrained_backbone(cfg, &seeds, &public)?;
    log::info!("pretrained backbone, public loss {pretrain_loss:.6}");
    let (block_influence, mask, proxy, correspondence) = compress(cfg, &backbone, &public)?;
    log::info!("retained blocks {:?}", mask.retained());
    let tasks = scenario_tasks(cfg, &seeds)?;
    let clients = build_clients(cfg, &tasks)?;
    Ok(Prepared {
        seeds,
        backbone,
        public,
        pretrain_loss,
        block_influence,
        mask,
        proxy,
        correspondence,
        tasks,
        clients,
    })
}

/// Final state and per-round metrics of a federated run.
#[derive(Debug, Clone)]
pub struct Federated {
    pub method: Method,
    pub state: FederatedState,
    pub rounds: Vec<RoundMetrics>,
}

pub fn federate(cfg: &RunConfig, prep: &Prepared, method: Method) -> Result<Federated> {
    let mut agg = cfg.aggregation.clone();
    agg.method = method;
    let client_cfg = ClientConfig {
        seed: prep.seeds.client_train,
        ..cfg.client.clone()
    };
    let mut state = FederatedState::initial(prep.proxy.params().clone());
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let out = run_round(&state, &prep.proxy, &prep.clients, &agg, &client_cfg)?;
        log::info!(
            "{method} round {t}: global eval loss {:.6}, mean conflict {:.4}",
            out.metrics.global_eval_loss,
            out.metrics.mean_conflict
        );
        rounds.push(out.metrics);
        state = out.state;
    }
    Ok(Federated { method, state, rounds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientEval {
    pub client_id: usize,
    pub kind: LossKind,
    pub backbone_loss: f64,
    pub backbone_accuracy: Option<f64>,
    pub fused_loss: f64,
    pub fused_accuracy: Option<f64>,
    pub proxy_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: Method,
    /// Unweighted mean over clients of the final global proxy's held-out loss.
    pub proxy_eval_loss: f64,
    /// Same for the fused backbone.
    pub fused_eval_loss: f64,
    /// `proxy_eval_loss` minus that of `fedproxy`, when it was run.
    pub delta_vs_fedproxy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub provenance: Provenance,
    pub pretrain_loss: f64,
    pub block_influence: Vec<f64>,
    pub retained_blocks: Vec<usize>,
    /// Fraction of backbone parameters outside the proxy.
    pub alpha: f64,
    /// Output distortion of the trained proxy against the backbone's
    /// retained sub-network.
    pub distortion: f64,
    pub rounds: Vec<RoundMetrics>,
    pub client_evals: Vec<ClientEval>,
    pub mean_backbone_loss: f64,
    pub mean_fused_loss: f64,
    pub mean_proxy_loss: f64,
    pub comparison: Vec<ComparisonRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Models produced by a run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub backbone: ResidualStack,
    pub proxy_initial: FlatParams,
    pub proxy_final: FlatParams,
    pub fused: FlatParams,
    pub correspondence: Correspondence,
    pub block_influence: BlockInfluenceReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub artifacts: RunArtifacts,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn evaluate_run(prep: &Prepared, fed: &Federated) -> Result<(FlatParams, Vec<ClientEval>)> {
    let fused = plug_in_fuse(prep.backbone.params(), &fed.state.global, &prep.correspondence)?;
    let fused_model = prep.backbone.with_params(fused.clone())?;
    let proxy_model = prep.proxy.with_params(fed.state.global.clone())?;
    let evals = prep
        .clients
        .iter()
        .map(|c| {
            let before = evaluate(&prep.backbone, &c.eval, c.kind)?;
            let after = evaluate(&fused_model, &c.eval, c.kind)?;
            Ok(ClientEval {
                client_id: c.id,
                kind: c.kind,
                backbone_loss: before.loss,
                backbone_accuracy: before.accuracy,
                fused_loss: after.loss,
                fused_accuracy: after.accuracy,
                proxy_loss: evaluate(&proxy_model, &c.eval, c.kind)?.loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fused, evals))
}

fn comparison_rows(results: &[(Method, Vec<ClientEval>)]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|(m, evals)| ComparisonRow {
            method: *m,
            proxy_eval_loss: mean(evals.iter().map(|e| e.proxy_loss)),
            fused_eval_loss: mean(evals.iter().map(|e| e.fused_loss)),
            delta_vs_fedproxy: None,
        })
        .collect();
    if let Some(base) = rows.iter().find(|r| r.method == Method::Fedproxy).map(|r| r.proxy_eval_loss) {
        for r in &mut rows {
            r.delta_vs_fedproxy = Some(r.proxy_eval_loss - base);
        }
    }
    rows
}

/// Pretrain, compress, train `cfg.rounds` rounds with the configured
/// method, fuse, and evaluate the backbone before and after fusion.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    let prep = prepare(cfg)?;
    let fed = federate(cfg, &prep, cfg.aggregation.method)?;
    let (fused, client_evals) = evaluate_run(&prep, &fed)?;
    let off_corr = prep.correspondence.backbone_mask();
    debug_assert!(fused
        .values()
        .iter()
        .zip(prep.backbone.params().values())
        .zip(off_corr.keep())
        .all(|((a, b), &k)| k || a.to_bits() == b.to_bits()));
    let trained = prep.proxy.with_params(fed.state.global.clone())?;
    let distortion = estimate_distortion(
        &prep.backbone,
        &trained,
        &prep.correspondence,
        &prep.public,
        cfg.public.bi_samples,
        PROBE_STREAM,
    )?;
    let comparison = comparison_rows(&[(fed.method, client_evals.clone())]);
    let report = RunReport {
        method: fed.method,
        provenance: Provenance {
            config_hash: cfg.hash(),
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
        },
        pretrain_loss: prep.pretrain_loss,
        block_influence: prep.block_influence.scores.clone(),
        retained_blocks: prep.mask.retained(),
        alpha: prep.correspondence.alpha(),
        distortion,
        mean_backbone_loss: mean(client_evals.iter().map(|e| e.backbone_loss)),
        mean_fused_loss: mean(client_evals.iter().map(|e| e.fused_loss)),
        mean_proxy_loss: mean(client_evals.iter().map(|e| e.proxy_loss)),
        rounds: fed.rounds,
        client_evals,
        comparison,
    };
    Ok(PipelineRun {
        report,
        artifacts: RunArtifacts {
            backbone: prep.backbone,
            proxy_initial: prep.proxy.params().clone(),
            proxy_final: fed.state.global,
            fused,
            correspondence: prep.correspondence,
            block_influence: prep.block_influence,
        },
    })
}

/// Run every method from the same compressed starting point and client
/// data, and tabulate final held-out losses.
pub fn compare_methods(cfg: &RunConfig, methods: &[Method]) -> Result<Vec<ComparisonRow>> {
    if methods.len() < 2 {
        return Err(Error::Config(format!("comparison needs ≥ 2 methods, got {}", methods.len())));
    }
    let prep = prepare(cfg)?;
    compare_prepared(cfg, &prep, methods)
}

pub fn compare_prepared(cfg: &RunConfig, prep: &Prepared, methods: &[Method]) -> Result<Vec<ComparisonRow>> {
    let results = methods
        .iter()
        .map(|&m| {
            let fed = federate(cfg, prep, m)?;
            Ok((m, evaluate_run(prep, &fed)?.1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(comparison_rows(&results))
}
