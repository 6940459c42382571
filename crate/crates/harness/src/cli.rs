//! The `usersod` command-line tool.

use std::fs::{self, File};
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use usersod_core::dataset::{load_dataset, load_scenes, serialize_dataset};
use usersod_core::{Need, TrainingSample};
use usersod_digger::pipeline::{emit_dataset, start_queue, DigReport};
use usersod_digger::{run_dig, Backends, CorrectionMode, CorrectionQueue, HttpConfig, OracleDetector, PromptTemplate};
use usersod_metrics::MetricsReport;
use usersod_model::{checkpoint, ModelConfig, Mode};
use usersod_synth::GeneratorConfig;

use crate::ablation::{run_ablation, AblationConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::train::{build_vocabulary, evaluate, init_from_esm, pretrain_esm, train_model, TrainConfig, TrainLog};

pub const TABLE_JSON: &str = "ablation.json";
pub const TABLE_TEXT: &str = "ablation.txt";

#[derive(Debug, Parser)]
#[command(name = "usersod", version, about = "User-need-driven salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed that overrides the one in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with commands and masks.
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// Number of scenes; overrides the config.
        #[arg(long)]
        scenes: Option<u32>,
        /// Make objects 0 and 1 identical except for colour.
        #[arg(long)]
        twin: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose need-conditioned samples for scenes and run the correction step.
    Dig {
        #[command(flatten)]
        common: Common,
        /// Scene directory written by synth-gen.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendKind::Oracle)]
        backends: BackendKind,
        #[arg(long, value_enum, default_value_t = Correction::Auto)]
        correction: Correction,
        /// JSON-lines decisions for `--correction file`.
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Listen address for `--correction serve`.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve an existing correction queue over HTTP until interrupted.
    ReviewServe {
        #[command(flatten)]
        common: Common,
        /// Queue directory (`<dig out>/queue`).
        #[arg(long)]
        queue: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of a built review UI to serve under `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Write the kept samples here on shutdown.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Train the command-free saliency network on conventional pairs.
    PretrainEsm {
        #[command(flatten)]
        common: Common,
        /// Manifest whose command-free samples are used.
        #[arg(long)]
        data: PathBuf,
        /// Manifest of held-out samples scored after every epoch.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to `<out>/train_log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train a need-conditioned model on top of a pretrained checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by pretrain-esm.
        #[arg(long)]
        esm: PathBuf,
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Overrides `model.mode` from the config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation row on the twin split and write the table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Correction {
    /// Accept every complete proposal.
    Auto,
    /// Apply `--decisions`; anything undecided stays pending.
    File,
    /// Review over HTTP, then emit on shutdown.
    Serve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Base,
    Usersal,
    UsersalPlus,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Base => Mode::Base,
            ModeArg::Usersal => Mode::Usersal,
            ModeArg::UsersalPlus => Mode::UsersalPlus,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigConfig {
    pub prompt: PromptTemplate,
    pub oracle: OracleDetector,
    pub http: HttpConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelTrainConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    All,
    Need,
    Conventional,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: EvalSplit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub ui_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub mode: Mode,
    pub all: Option<MetricsReport>,
    pub need: Option<MetricsReport>,
    pub conventional: Option<MetricsReport>,
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| HarnessError::Config {
        what: "config file",
        reason: format!("{}: {e}", path.display()),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value).expect("reports serialise");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn open_log(path: &Path) -> Result<TrainLog> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(TrainLog::new(BufWriter::new(File::create(path).map_err(io_err(path))?)))
}

fn backends(kind: BackendKind, cfg: &DigConfig) -> Result<Backends> {
    match kind {
        BackendKind::Oracle => Ok(Backends::oracle(cfg.oracle.clone())),
        BackendKind::Http => Backends::http(cfg.http.clone()).map_err(|e| HarnessError::Config {
            what: "http backends",
            reason: e.to_string(),
        }),
    }
}

fn dig_err(e: usersod_digger::DigError) -> HarnessError {
    HarnessError::Config {
        what: "dig run",
        reason: e.to_string(),
    }
}

fn serve(addr: SocketAddr, queue: Arc<CorrectionQueue>, ui_dir: Option<PathBuf>) -> Result<()> {
    usersod_review::serve_blocking(addr, queue, ui_dir).map_err(|source| HarnessError::Io {
        path: PathBuf::from(addr.to_string()),
        source,
    })
}

fn conventional_only(samples: Vec<TrainingSample>) -> Vec<TrainingSample> {
    samples.into_iter().filter(|s| matches!(s.need, Need::Zero)).collect()
}

fn load_optional(path: Option<&Path>) -> Result<Vec<TrainingSample>> {
    Ok(match path {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen {
            common,
            scenes,
            twin,
            out,
        } => {
            let mut cfg: GeneratorConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(n) = scenes {
                cfg.num_scenes = n;
            }
            cfg.twin_pair |= twin;
            let records = usersod_synth::generate_dataset(&cfg)?;
            let manifest = serialize_dataset(&records, &out)?;
            log::info!("{} scenes written; manifest {}", records.len(), manifest.display());
        }
        Command::Dig {
            common,
            input,
            backends: kind,
            correction,
            decisions,
            addr,
            out,
        } => {
            let mut cfg: DigConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.oracle.seed = s;
            }
            let scenes = load_scenes(&input)?;
            let b = backends(kind, &cfg)?;
            let report = match correction {
                Correction::Auto => run_dig(&scenes, &b, &cfg.prompt, &CorrectionMode::AutoAccept, &out),
                Correction::File => run_dig(&scenes, &b, &cfg.prompt, &CorrectionMode::FileQueue(decisions), &out),
                Correction::Serve => {
                    let (queue, report) = start_queue(&scenes, &b, &cfg.prompt, &out).map_err(dig_err)?;
                    let queue = Arc::new(queue);
                    serve(addr, Arc::clone(&queue), None)?;
                    emit_dataset(&queue, &out, report)
                }
            }
            .map_err(dig_err)?
            .1;
            log_dig(&report);
        }
        Command::ReviewServe {
            common,
            queue,
            addr,
            ui_dir,
            emit,
        } => {
            let cfg: ReviewConfig = load_config(common.config.as_deref())?;
            let q = Arc::new(CorrectionQueue::open(&queue).map_err(dig_err)?);
            serve(addr, Arc::clone(&q), ui_dir.or(cfg.ui_dir))?;
            if let Some(out) = emit {
                let report = DigReport {
                    scenes: q.snapshot().iter().map(|p| p.scene_id).collect::<std::collections::BTreeSet<_>>().len(),
                    ..DigReport::default()
                };
                log_dig(&emit_dataset(&q, &out, report).map_err(dig_err)?.1);
            }
        }
        Command::PretrainEsm {
            common,
            data,
            heldout,
            out,
            log,
        } => {
            let mut cfg: ModelTrainConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let samples = conventional_only(load_dataset(&data)?);
            let heldout = conventional_only(load_optional(heldout.as_deref())?);
            let mut log = open_log(&log.unwrap_or_else(|| out.join("train_log.jsonl")))?;
            let (model, outcome) = pretrain_esm(&cfg.model, &samples, &heldout, &cfg.train, &mut log)?;
            // Saved either way: on divergence this is the last good state.
            checkpoint::save(&model, &out, true)?;
            let summary = outcome?;
            log::info!("{} steps; checkpoint {}", summary.steps, out.display());
        }
        Command::Train {
            common,
            data,
            esm,
            heldout,
            mode,
            out,
            log,
        } => {
            let mut cfg: ModelTrainConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            if let Some(m) = mode {
                cfg.model.mode = m.into();
            }
            let (esm_model, meta) = checkpoint::load::<f32>(&esm, None)?;
            if !meta.frozen {
                return Err(HarnessError::Config {
                    what: "esm checkpoint",
                    reason: format!("{} is not marked frozen", esm.display()),
                });
            }
            let samples = load_dataset(&data)?;
            let heldout = load_optional(heldout.as_deref())?;
            let mut model = init_from_esm(&cfg.model, build_vocabulary(&samples), &esm_model, cfg.train.seed)?;
            let mut log = open_log(&log.unwrap_or_else(|| out.join("train_log.jsonl")))?;
            let outcome = train_model(&mut model, &samples, &heldout, &cfg.train, &mut log);
            checkpoint::save(&model, &out, false)?;
            let summary = outcome?;
            log::info!("{} steps; checkpoint {}", summary.steps, out.display());
        }
        Command::Eval {
            common,
            checkpoint: ckpt,
            data,
            out,
        } => {
            let cfg: EvalConfig = load_config(common.config.as_deref())?;
            let (model, meta) = checkpoint::load::<f32>(&ckpt, None)?;
            let samples = load_dataset(&data)?;
            let (need, conv): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| s.need.text().is_some());
            let score = |s: &[TrainingSample]| -> Result<Option<MetricsReport>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    evaluate(&model, s).map(Some)
                }
            };
            let want = |split| cfg.split == EvalSplit::All || cfg.split == split;
            let report = EvalReport {
                checkpoint: ckpt.clone(),
                mode: meta.config.mode,
                all: if cfg.split == EvalSplit::All { score(&samples)? } else { None },
                need: if want(EvalSplit::Need) { score(&need)? } else { None },
                conventional: if want(EvalSplit::Conventional) { score(&conv)? } else { None },
            };
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("reports serialise")),
            }
        }
        Command::Ablate { common, out } => {
            let mut cfg: AblationConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                let n = cfg.seeds.len().max(1) as u64;
                cfg.seeds = (s..s + n).collect();
            }
            let table = run_ablation(&cfg, |line| log::info!("{line}"))?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            write_json(&out.join(TABLE_JSON), &table)?;
            let text = table.render();
            let path = out.join(TABLE_TEXT);
            fs::write(&path, &text).map_err(io_err(&path))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn log_dig(r: &DigReport) {
    log::info!(
        "{} scenes, {} proposals: {} accepted, {} edited, {} rejected, {} pending; {} samples",
        r.scenes,
        r.proposals,
        r.accepted,
        r.edited,
        r.rejected,
        r.pending,
        r.samples
    );
}
