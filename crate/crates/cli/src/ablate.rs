use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phonodiff_core::config::{Precision, RunConfig};
use phonodiff_core::model::{BlockConfig, Model};
use phonodiff_core::train::{evaluate, EvalOptions};
use phonodiff_core::{checkpoint, Error, Result};
use serde::Serialize;

use crate::commands::{eval_options, load_or_generate_corpus, train, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Window,
    Size,
    Mask,
    Multitask,
    Steps,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "window" => AblationAxis::Window,
            "size" => AblationAxis::Size,
            "mask" => AblationAxis::Mask,
            "multitask" => AblationAxis::Multitask,
            "steps" => AblationAxis::Steps,
            other => {
                return Err(Error::config(
                    "--axis",
                    format!("`{other}` is not one of window, size, mask, multitask, steps"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub steps: usize,
    pub eps_validation_loss: f64,
    pub log_mel_teacher: f64,
    pub log_mel_predicted: f64,
    pub duration_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub axis: String,
    pub noise_baseline: f64,
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 7] = [
    "variant",
    "params",
    "steps",
    "eps_val_loss",
    "log_mel_teacher",
    "log_mel_predicted",
    "dur_mse",
];

impl AblationTable {
    fn cells(&self) -> Vec<[String; 7]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.variant.clone(),
                    r.params.to_string(),
                    r.steps.to_string(),
                    format!("{:.4}", r.eps_validation_loss),
                    format!("{:.3}", r.log_mel_teacher),
                    format!("{:.3}", r.log_mel_predicted),
                    format!("{:.3}", r.duration_mse),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = COLUMNS.join(",");
        s.push('\n');
        for row in self.cells() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Column-aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |vals: &[String]| -> String {
            let parts: Vec<String> = vals
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut s = String::new();
        let _ = writeln!(s, "ablation: {} (noise baseline log-mel L2 {:.3})", self.axis, self.noise_baseline);
        let header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "{}", line(&header));
        let _ = writeln!(s, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        for row in cells {
            let _ = writeln!(s, "{}", line(&row));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("ablation-{}.csv", self.axis));
        let txt = dir.join(format!("ablation-{}.txt", self.axis));
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&txt, self.to_text())?;
        Ok((csv, txt))
    }
}

/// Variants trained for an axis; window lengths and mask blocks are the
/// full-scale values divided by four.
fn variants(base: &RunConfig, axis: AblationAxis) -> Vec<(String, RunConfig)> {
    let with = |name: &str, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (name.to_string(), c)
    };
    match axis {
        AblationAxis::Window => vec![
            with("window=16", &|c| c.model.window_frames = 16),
            with("window=64", &|c| c.model.window_frames = 64),
        ],
        AblationAxis::Size => vec![
            with("small", &|c| {
                let m = &mut c.model;
                m.embedding_dim /= 2;
                m.encoder_channels.iter_mut().for_each(|v| *v /= 2);
                m.lstm_units /= 2;
                m.decoder_input_channels /= 2;
                m.ublocks = m
                    .ublocks
                    .iter()
                    .map(|b| BlockConfig {
                        channels: b.channels / 2,
                        factor: b.factor,
                    })
                    .collect();
                m.dblock_channels.iter_mut().for_each(|v| *v = (*v / 2).max(2) & !1);
            }),
            with("base", &|_| {}),
        ],
        AblationAxis::Mask => vec![
            with("mask=off", &|c| c.model.masking = false),
            with("mask=on", &|c| {
                c.model.masking = true;
                c.model.mask_block_len = 8;
                c.model.mask_count = 2;
            }),
        ],
        AblationAxis::Multitask => vec![
            with("mt=off", &|c| c.model.multitask = false),
            with("mt=on", &|c| {
                c.model.multitask = true;
                c.model.mel_bins = c.mel.bins;
            }),
        ],
        AblationAxis::Steps => Vec::new(),
    }
}

/// Runs the sweep for `axis` under `base.out` and writes the table there.
/// The steps axis evaluates `checkpoint` at each of `train.eval_steps`
/// without retraining.
pub fn run_ablation(base: &RunConfig, axis: AblationAxis, checkpoint_path: Option<&Path>, corpus: Option<&Path>) -> Result<AblationTable> {
    base.validate()?;
    let out = base.out.clone();
    let axis_name = format!("{axis:?}").to_lowercase();
    let mut rows = Vec::new();
    let corpus_data = load_or_generate_corpus(base, corpus)?;
    let noise = phonodiff_core::train::noise_baseline(
        &corpus_data.holdout[..eval_count(base, corpus_data.holdout.len())],
        &base.mel,
        eval_options(base).seed,
    )?;
    if axis == AblationAxis::Steps {
        let path = checkpoint_path.ok_or_else(|| Error::config("--checkpoint", "the steps axis needs a checkpoint"))?;
        let opts = eval_options(base);
        let report = match base.precision {
            Precision::F32 => {
                let (m, st) = checkpoint::load::<f32>(path)?;
                (evaluate(&m, &st.ema, &corpus_data.holdout, &base.schedule.build()?, &base.mel, &opts)?, st.params.num_trainable())
            }
            Precision::F64 => {
                let (m, st) = checkpoint::load::<f64>(path)?;
                (evaluate(&m, &st.ema, &corpus_data.holdout, &base.schedule.build()?, &base.mel, &opts)?, st.params.num_trainable())
            }
        };
        let (report, params) = report;
        for r in &report.rows {
            rows.push(AblationRow {
                variant: format!("steps={}", r.steps),
                params,
                steps: r.steps,
                eps_validation_loss: report.eps_validation_loss,
                log_mel_teacher: r.log_mel_teacher,
                log_mel_predicted: r.log_mel_predicted,
                duration_mse: report.duration_mse,
            });
        }
    } else {
        for (name, mut cfg) in variants(base, axis) {
            cfg.out = out.join(name.replace('=', "-"));
            cfg.validate()?;
            let full = cfg.schedule.steps;
            cfg.train.eval_steps = vec![full];
            let outcome = train(
                &cfg,
                &TrainOptions {
                    corpus: corpus.map(Path::to_path_buf),
                    force: true,
                    ..TrainOptions::default()
                },
            )?;
            let params = Model::from_seed::<f32>(cfg.model.clone(), 0)?.1.num_trainable();
            let report = outcome
                .report
                .ok_or_else(|| Error::config("train.steps", "ablation variants need at least one training step"))?;
            let row = report.row(full).expect("full-step row").clone();
            rows.push(AblationRow {
                variant: name,
                params,
                steps: full,
                eps_validation_loss: report.eps_validation_loss,
                log_mel_teacher: row.log_mel_teacher,
                log_mel_predicted: row.log_mel_predicted,
                duration_mse: report.duration_mse,
            });
        }
    }
    let table = AblationTable {
        axis: axis_name,
        noise_baseline: noise,
        rows,
    };
    table.write(&out)?;
    Ok(table)
}

fn eval_count(cfg: &RunConfig, available: usize) -> usize {
    let opts: EvalOptions = eval_options(cfg);
    if opts.utterances == 0 {
        available
    } else {
        opts.utterances.min(available)
    }
}
