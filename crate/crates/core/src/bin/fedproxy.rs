use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedproxy::checkpoint::{load_checkpoint, load_correspondence, save_checkpoint, save_correspondence};
use fedproxy::fedopt::{server_merge, AggConfig, Method};
use fedproxy::fusion::plug_in_fuse;
use fedproxy::harness::{
    backbone_from_params, compare_methods, comparison_csv, comparison_markdown, compress, federate,
    metrics_csv, pretrained_backbone, run_pipeline, save_run, RunConfig,
};
use fedproxy::model::public_task;
use fedproxy::theory::{sweep, sweep_csv, SweepConfig};
use fedproxy::{Error, Result, TaskVector};

#[derive(Parser)]
#[command(name = "fedproxy", version, about = "Federated proxy training, merging and fusion on toy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a backbone into a proxy by block influence.
    Compress {
        #[command(flatten)]
        config: ConfigArg,
        /// Pretrained backbone checkpoint; built and pretrained from the config when absent.
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the federated rounds and write metrics and the final proxy.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Starting proxy checkpoint; compressed from the config when absent.
        #[arg(long)]
        proxy: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Merge client checkpoints into a new global checkpoint.
    Merge {
        #[arg(long)]
        global: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        clients: Vec<PathBuf>,
        #[arg(long, default_value = "fedproxy")]
        method: Method,
        /// Aggregation settings (TOML, the `aggregation` table of a run config).
        #[arg(long)]
        agg: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Plug a trained proxy back into its backbone.
    Fuse {
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        proxy: PathBuf,
        #[arg(long)]
        correspondence: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check the fusion-error bound on random quadratic instances.
    VerifyBound {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 12)]
        rows: usize,
        /// Fraction of dimensions inside the proxy mask.
        #[arg(long, default_value_t = 0.5)]
        keep_frac: f64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        probes: usize,
        /// CSV destination; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run several methods from the same compressed proxy.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated methods; all of them when absent.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline with report, metrics and checkpoints.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory; falls back to `output_dir` of the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compress { config, backbone, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let seeds = cfg.seeds();
            let public = public_task(seeds.scenario, seeds.public, cfg.backbone.input_dim, cfg.backbone.out_dim);
            let model = match backbone {
                Some(p) => backbone_from_params(&cfg, load_checkpoint(p)?)?,
                None => {
                    let (m, _) = pretrained_backbone(&cfg, &seeds, &public)?;
                    std::fs::create_dir_all(&out)?;
                    save_checkpoint(m.params(), out.join("backbone.fpx"))?;
                    m
                }
            };
            let (report, mask, proxy, corr) = compress(&cfg, &model, &public)?;
            std::fs::create_dir_all(&out)?;
            save_checkpoint(proxy.params(), out.join("proxy.fpx"))?;
            save_correspondence(&corr, out.join("correspondence.fpx"))?;
            write(&out.join("block_influence.csv"), &report.to_csv())?;
            println!("retained blocks {:?}, alpha {:.4}", mask.retained(), corr.alpha());
        }
        Command::Train { config, proxy, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let mut prep = fedproxy::harness::prepare(&cfg)?;
            if let Some(p) = proxy {
                prep.proxy = prep.proxy.with_params(load_checkpoint(p)?)?;
            }
            let fed = federate(&cfg, &prep, cfg.aggregation.method)?;
            std::fs::create_dir_all(&out)?;
            write(&out.join("metrics.csv"), &metrics_csv(&fed.rounds))?;
            save_checkpoint(&fed.state.global, out.join("proxy_final.fpx"))?;
            if let Some(last) = fed.rounds.last() {
                println!("final global eval loss {:.6}", last.global_eval_loss);
            }
        }
        Command::Merge {
            global,
            clients,
            method,
            agg,
            out,
        } => {
            let mut agg_cfg = match agg {
                Some(p) => toml::from_str::<AggConfig>(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Config(e.to_string()))?,
                None => AggConfig::default(),
            };
            agg_cfg.method = method;
            agg_cfg.validate()?;
            let g = load_checkpoint(global)?;
            let params = clients.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
            let tvs = params
                .iter()
                .enumerate()
                .map(|(k, p)| TaskVector::between(p, &g, k, 0))
                .collect::<Result<Vec<_>>>()?;
            let merged = server_merge(&g, &params, &tvs, &agg_cfg)?;
            save_checkpoint(&merged.global, &out)?;
            println!("mean conflict {:.4}", merged.analysis.mean_conflict());
        }
        Command::Fuse {
            backbone,
            proxy,
            correspondence,
            out,
        } => {
            let fused = plug_in_fuse(
                &load_checkpoint(backbone)?,
                &load_checkpoint(proxy)?,
                &load_correspondence(correspondence)?,
            )?;
            save_checkpoint(&fused, out)?;
        }
        Command::VerifyBound {
            dim,
            rows,
            keep_frac,
            count,
            seed,
            probes,
            out,
        } => {
            let cfg = SweepConfig {
                dim,
                rows,
                keep_frac,
                count,
                seed,
                n_probes: probes,
                ..SweepConfig::default()
            };
            let results = sweep(&cfg)?;
            let csv = sweep_csv(&results);
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
            let held = results.iter().filter(|r| r.check.holds).count();
            eprintln!("bound holds on {held}/{} instances", results.len());
        }
        Command::Compare { config, methods, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods };
            let rows = compare_methods(&cfg, &methods)?;
            print!("{}", comparison_markdown(&rows));
            if let Some(p) = out {
                write(&p, &comparison_csv(&rows))?;
            }
        }
        Command::Report { config, out } => {
            let cfg = RunConfig::load(&config.config)?;
            let dir = out_dir(&cfg, out)?;
            let run = run_pipeline(&cfg)?;
            save_run(&run, &dir)?;
            println!(
                "mean held-out loss: backbone {:.6}, fused {:.6}",
                run.report.mean_backbone_loss, run.report.mean_fused_loss
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
