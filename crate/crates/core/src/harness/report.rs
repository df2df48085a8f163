use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pipeline::{ComparisonRow, PipelineRun, RunReport};
use crate::checkpoint::{save_checkpoint, save_correspondence};
use crate::error::Result;
use crate::fedopt::RoundMetrics;

pub const METRICS_CSV_HEADER: &str = "round,client_id,task_loss,eval_loss,h_k,w_k,mean_C,r_k,delta_norm";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// One row per client and one `global` row per round. Client-only columns
/// are empty on global rows.
pub fn metrics_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rounds {
        for c in &r.clients {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.round,
                c.client_id,
                c.task_loss,
                c.eval_loss,
                c.heterogeneity,
                c.weight,
                r.mean_conflict,
                c.retention,
                c.delta_norm
            );
        }
        let _ = writeln!(
            out,
            "{},global,{},{},,,{},,{}",
            r.round, r.global_task_loss, r.global_eval_loss, r.mean_conflict, r.delta_norm
        );
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("method,proxy_eval_loss,fused_eval_loss,delta_vs_fedproxy\n");
    for r in rows {
        let delta = r.delta_vs_fedproxy.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.method, r.proxy_eval_loss, r.fused_eval_loss, delta);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut md = String::from("| method | proxy eval loss | fused eval loss | Δ vs fedproxy |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {:.6} | {:.6} | {} |",
            r.method,
            r.proxy_eval_loss,
            r.fused_eval_loss,
            r.delta_vs_fedproxy.map(|d| format!("{d:+.6}")).unwrap_or_else(|| "-".into())
        );
    }
    md
}

pub fn report_markdown(report: &RunReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Run report: {}\n", report.method);
    let _ = writeln!(md, "- config hash: `{}`", report.provenance.config_hash);
    let _ = writeln!(md, "- version: {}", report.provenance.crate_version);
    let _ = writeln!(md, "- pretraining loss: {:.6}", report.pretrain_loss);
    let _ = writeln!(md, "- retained blocks: {:?}", report.retained_blocks);
    let _ = writeln!(md, "- removed parameter fraction α: {:.4}", report.alpha);
    let _ = writeln!(md, "- compression distortion η̂: {:.6}\n", report.distortion);

    md.push_str("## Rounds\n\n| round | client | task loss | eval loss | h_k | w_k | mean C | r_k | Δ norm |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &report.rounds {
        for c in &r.clients {
            let _ = writeln!(
                md,
                "| {} | {} | {:.6} | {:.6} | {:.4} | {:.4} | {:.4} | {:.4} | {:.6} |",
                r.round,
                c.client_id,
                c.task_loss,
                c.eval_loss,
                c.heterogeneity,
                c.weight,
                r.mean_conflict,
                c.retention,
                c.delta_norm
            );
        }
        let _ = writeln!(
            md,
            "| {} | global | {:.6} | {:.6} | | | {:.4} | | {:.6} |",
            r.round, r.global_task_loss, r.global_eval_loss, r.mean_conflict, r.delta_norm
        );
    }

    md.push_str("\n## Held-out evaluation\n\n");
    md.push_str("| client | kind | backbone loss | backbone acc | fused loss | fused acc | proxy loss |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for e in &report.client_evals {
        let kind = match e.kind {
            crate::model::LossKind::Regression => "regression",
            crate::model::LossKind::BinaryClassification => "classification",
        };
        let _ = writeln!(
            md,
            "| {} | {} | {:.6} | {} | {:.6} | {} | {:.6} |",
            e.client_id,
            kind,
            e.backbone_loss,
            opt(e.backbone_accuracy),
            e.fused_loss,
            opt(e.fused_accuracy),
            e.proxy_loss
        );
    }
    let _ = writeln!(
        md,
        "| mean | | {:.6} | | {:.6} | | {:.6} |",
        report.mean_backbone_loss, report.mean_fused_loss, report.mean_proxy_loss
    );

    if !report.comparison.is_empty() {
        md.push_str("\n## Methods\n\n");
        md.push_str(&comparison_markdown(&report.comparison));
    }
    md
}

/// Write the report in the requested formats; returns the files written.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("metrics.csv", metrics_csv(&report.rounds)),
            ReportFormat::Markdown => ("report.md", report_markdown(report)),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Report files plus JSON, block influence CSV, checkpoints and the
/// correspondence.
pub fn save_run(run: &PipelineRun, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = emit_report(&run.report, dir, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    let a = &run.artifacts;
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json", run.report.to_json())?;
    put("block_influence.csv", a.block_influence.to_csv())?;
    for (name, params) in [
        ("backbone.fpx", a.backbone.params()),
        ("proxy_initial.fpx", &a.proxy_initial),
        ("proxy_final.fpx", &a.proxy_final),
        ("fused.fpx", &a.fused),
    ] {
        let p = dir.join(name);
        save_checkpoint(params, &p)?;
        written.push(p);
    }
    let p = dir.join("correspondence.fpx");
    save_correspondence(&a.correspondence, &p)?;
    written.push(p);
    Ok(written)
}
