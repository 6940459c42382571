//! Component ablation on the twin-pair split.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use usersod_core::TrainingSample;
use usersod_metrics::MetricsReport;
use usersod_model::{Mode, ModelConfig, TsnVariant, UserSal};

use crate::error::{HarnessError, Result};
use crate::splits::{all_samples, conventional_test_samples, fine_grained_split, twin_need_samples, SplitConfig};
use crate::train::{
    build_vocabulary, conventional_samples, evaluate, init_from_esm, pretrain_esm, train_model, TrainConfig,
    TrainLog,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub split: SplitConfig,
    /// Architecture of the full model; rows switch individual components off.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    /// Training seeds of the base, usersal and usersal_plus rows.
    pub seeds: Vec<u64>,
    /// How many of `seeds` the remaining rows use.
    pub variant_seeds: usize,
    /// Size of the held-out need subset scored after every epoch.
    pub heldout_samples: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                epochs: 8,
                learning_rate: 1e-3,
                samples_per_epoch: Some(1600),
                ..TrainConfig::default()
            },
            train: TrainConfig {
                epochs: 8,
                batch_size: 8,
                learning_rate: 1e-2,
                samples_per_epoch: Some(1200),
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            variant_seeds: 1,
            heldout_samples: 64,
        }
    }
}

/// One configuration of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub name: String,
    pub mode: Mode,
    pub tsn_variant: TsnVariant,
    pub multi_scale: bool,
    pub appearance_loss: bool,
    /// Trained with every seed rather than the first `variant_seeds`.
    pub core: bool,
}

impl RowSpec {
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            tsn_variant: self.tsn_variant,
            multi_scale: self.multi_scale,
            appearance_loss: self.appearance_loss,
            ..base.clone()
        }
    }
}

pub const BASE_ROW: &str = "base";
pub const USERSAL_ROW: &str = "usersal";
pub const USERSAL_PLUS_ROW: &str = "usersal_plus";

/// Rows in table order: the component ladder, the single-scale variant, then the other TSNs.
pub fn row_specs(model: &ModelConfig) -> Vec<RowSpec> {
    let row = |name: &str, mode, tsn, multi_scale, al, core| RowSpec {
        name: name.to_string(),
        mode,
        tsn_variant: tsn,
        multi_scale,
        appearance_loss: al,
        core,
    };
    let tsn = model.tsn_variant;
    let mut rows = vec![
        row(BASE_ROW, Mode::Base, tsn, true, false, true),
        row(USERSAL_ROW, Mode::Usersal, tsn, true, false, true),
        row("usersal_plus_no_al", Mode::UsersalPlus, tsn, true, false, false),
        row(USERSAL_PLUS_ROW, Mode::UsersalPlus, tsn, true, true, true),
        row("usersal_plus_single_scale", Mode::UsersalPlus, tsn, false, true, false),
    ];
    for v in TsnVariant::ALL.into_iter().filter(|&v| v != tsn) {
        rows.push(row(&format!("tsn_{}", v.as_str()), Mode::UsersalPlus, v, true, true, false));
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub steps: usize,
    /// Twin-target commands on the test scenes.
    pub need: MetricsReport,
    /// Command-free samples on the test scenes.
    pub conventional: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: RowSpec,
    pub runs: Vec<RunResult>,
    /// Per-metric medians over `runs`.
    pub need: Option<MetricsReport>,
    pub conventional: Option<MetricsReport>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub train_samples: usize,
    pub need_test_samples: usize,
    pub conventional_test_samples: usize,
    /// Metrics of the pretrained command-free network on the test scenes.
    pub pretrained_need: MetricsReport,
    pub pretrained_conventional: MetricsReport,
    pub rows: Vec<AblationRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn median_report(reports: &[&MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let m = |f: fn(&MetricsReport) -> f64| median(&mut reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    Some(MetricsReport {
        mae: m(|r| r.mae),
        f_measure: m(|r| r.f_measure),
        s_measure: m(|r| r.s_measure),
        e_measure: m(|r| r.e_measure),
        count: reports[0].count,
        f_measure_skipped: reports[0].f_measure_skipped,
    })
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.spec.name == name)
    }

    /// Median need-split MAE of a row that trained successfully.
    pub fn need_mae(&self, name: &str) -> Option<f64> {
        self.row(name)?.need.as_ref().map(|r| r.mae)
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<27} {:>5} | {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
            "row", "seeds", "need Sm", "Fm", "Em", "MAE", "conv Sm", "Fm", "Em", "MAE"
        );
        let _ = writeln!(out, "{}", "-".repeat(99));
        let cells = |r: &MetricsReport| {
            format!(
                "{:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                r.s_measure, r.f_measure, r.e_measure, r.mae
            )
        };
        let _ = writeln!(
            out,
            "{:<27} {:>5} | {} | {}",
            "pretrained (no commands)",
            "-",
            cells(&self.pretrained_need),
            cells(&self.pretrained_conventional)
        );
        for row in &self.rows {
            match (&row.need, &row.conventional, &row.failure) {
                (Some(n), Some(c), None) => {
                    let _ = writeln!(
                        out,
                        "{:<27} {:>5} | {} | {}",
                        row.spec.name,
                        row.runs.len(),
                        cells(n),
                        cells(c)
                    );
                }
                _ => {
                    let _ = writeln!(
                        out,
                        "{:<27} {:>5} | failed: {}",
                        row.spec.name,
                        row.runs.len(),
                        row.failure.as_deref().unwrap_or("no runs")
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "need split: {} twin-target commands; conventional split: {} images; {} training samples",
            self.need_test_samples, self.conventional_test_samples, self.train_samples
        );
        out
    }
}

fn train_row(
    spec: &RowSpec,
    config: &AblationConfig,
    esm: &UserSal<f32>,
    data: &Data,
    seed: u64,
) -> Result<RunResult> {
    let model_cfg = spec.model_config(&config.model);
    let vocab = build_vocabulary(&data.train);
    let mut model = init_from_esm(&model_cfg, vocab, esm, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let summary = train_model(&mut model, &data.train, &data.heldout, &train_cfg, &mut TrainLog::sink())?;
    Ok(RunResult {
        seed,
        steps: summary.steps,
        need: evaluate(&model, &data.need_test)?,
        conventional: evaluate(&model, &data.conventional_test)?,
    })
}

struct Data {
    train: Vec<TrainingSample>,
    heldout: Vec<TrainingSample>,
    need_test: Vec<TrainingSample>,
    conventional_test: Vec<TrainingSample>,
}

/// Pretrain the command-free network once, then train and score every row.
///
/// A row whose runs fail is reported as failed; the table is still produced.
/// `progress` receives one human-readable line per finished run.
pub fn run_ablation(config: &AblationConfig, mut progress: impl FnMut(&str)) -> Result<AblationTable> {
    if config.seeds.is_empty() {
        return Err(HarnessError::Config {
            what: "ablation config",
            reason: "at least one seed is required".into(),
        });
    }
    config.model.validate()?;
    let split = fine_grained_split(&config.split)?;
    let need_test = twin_need_samples(&split.test);
    let data = Data {
        train: all_samples(&split.train),
        heldout: need_test.iter().take(config.heldout_samples).cloned().collect(),
        need_test,
        conventional_test: conventional_test_samples(&split.test),
    };

    let clock = Instant::now();
    let (esm, outcome) = pretrain_esm(
        &config.model,
        &conventional_samples(&split.train),
        &[],
        &config.pretrain,
        &mut TrainLog::sink(),
    )?;
    outcome?;
    let pretrained_need = evaluate(&esm, &data.need_test)?;
    let pretrained_conventional = evaluate(&esm, &data.conventional_test)?;
    progress(&format!(
        "pretrained command-free network: need MAE {:.4}, conventional MAE {:.4} ({:.0}s)",
        pretrained_need.mae,
        pretrained_conventional.mae,
        clock.elapsed().as_secs_f64()
    ));

    let mut rows = Vec::new();
    for spec in row_specs(&config.model) {
        let seeds: Vec<u64> = if spec.core {
            config.seeds.clone()
        } else {
            config.seeds.iter().copied().take(config.variant_seeds.max(1)).collect()
        };
        let mut runs = Vec::new();
        let mut failure = None;
        for seed in seeds {
            let start = Instant::now();
            match train_row(&spec, config, &esm, &data, seed) {
                Ok(run) => {
                    progress(&format!(
                        "{} seed {}: need MAE {:.4}, conventional MAE {:.4} ({:.0}s)",
                        spec.name,
                        seed,
                        run.need.mae,
                        run.conventional.mae,
                        start.elapsed().as_secs_f64()
                    ));
                    runs.push(run);
                }
                Err(e) => {
                    progress(&format!("{} seed {}: failed: {e}", spec.name, seed));
                    failure = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        let (need, conventional) = if failure.is_none() {
            (
                median_report(&runs.iter().map(|r| &r.need).collect::<Vec<_>>()),
                median_report(&runs.iter().map(|r| &r.conventional).collect::<Vec<_>>()),
            )
        } else {
            (None, None)
        };
        rows.push(AblationRow {
            spec,
            runs,
            need,
            conventional,
            failure,
        });
    }
    Ok(AblationTable {
        train_samples: data.train.len(),
        need_test_samples: data.need_test.len(),
        conventional_test_samples: data.conventional_test.len(),
        pretrained_need,
        pretrained_conventional,
        rows,
    })
}
