//! The five architecture variants trained on the same data and seed, plus
//! an untrained floor, evaluated on the same seeds.

use std::fmt::Write as _;
use std::path::Path;

use osha_dataset::ProcessedDataset;
use osha_nn::{load_checkpoint, Ablation, Model};
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, EvalConfig, EvalReport, Policy};
use crate::report::MeanStd;
use crate::train::{train, EpochLog, TrainConfig};
use crate::PipelineError;

pub const UNTRAINED: &str = "untrained";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub slug: String,
    pub trained: bool,
    /// One report per evaluated density.
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub densities: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

/// Get the model of one variant: `out/<slug>/best.ckpt` when present,
/// otherwise train it when data is given, otherwise a fresh model.
fn variant(
    ablation: Ablation,
    data: Option<&ProcessedDataset>,
    base: &TrainConfig,
    out: &Path,
    on_epoch: &mut dyn FnMut(Ablation, &EpochLog),
) -> Result<(Model, bool), PipelineError> {
    let dir = out.join(ablation.slug());
    let ckpt = dir.join("best.ckpt");
    if ckpt.is_file() {
        let m = load_checkpoint(&ckpt)?;
        if m.config.ablation() != Some(ablation) {
            return Err(PipelineError::Config(format!("{} holds a different variant", ckpt.display())));
        }
        return Ok((m, true));
    }
    match data {
        Some(d) => {
            let cfg = TrainConfig { model: ablation.config(&base.model), ..base.clone() };
            let (m, _) = train(&cfg, d, Some(&dir), &mut |e| on_epoch(ablation, e))?;
            Ok((m, true))
        }
        None => Ok((Model::new(ablation.config(&base.model), base.seed)?, false)),
    }
}

/// Train (or load) every variant, then evaluate each and an untrained copy
/// of the full model at every density with the same seeds.
pub fn ablation_suite(
    data: Option<&ProcessedDataset>,
    base: &TrainConfig,
    eval: &EvalConfig,
    densities: &[f64],
    out: &Path,
    on_epoch: &mut dyn FnMut(Ablation, &EpochLog),
) -> Result<AblationReport, PipelineError> {
    std::fs::create_dir_all(out).map_err(PipelineError::io(out))?;
    let mut rows = Vec::new();
    let run_row = |name: &str, slug: &str, model: &Model, trained: bool| -> Result<AblationRow, PipelineError> {
        let reports = densities
            .iter()
            .map(|&density| evaluate(Policy::Model(model), slug, &EvalConfig { density, ..eval.clone() }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AblationRow { name: name.to_string(), slug: slug.to_string(), trained, reports })
    };
    let untrained = Model::new(Ablation::TransformerSwapAux.config(&base.model), base.seed)?;
    rows.push(run_row("Untrained", UNTRAINED, &untrained, false)?);
    for a in Ablation::ALL {
        let (m, trained) = variant(a, data, base, out, on_epoch)?;
        rows.push(run_row(a.name(), a.slug(), &m, trained)?);
    }
    let report = AblationReport { densities: densities.to_vec(), rows };
    let p = out.join("ablation.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(PipelineError::io(&p))?;
    let p = out.join("ablation.txt");
    std::fs::write(&p, report.render()).map_err(PipelineError::io(&p))?;
    Ok(report)
}

impl AblationReport {
    /// Table with one block per density; `*` marks the best value of each
    /// column among trained rows (lower is better except the overtake
    /// ratio).
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, density) in self.densities.iter().enumerate() {
            let _ = writeln!(s, "density {density}/km");
            let _ = writeln!(s, "{:<34} {:>16} {:>18} {:>18}", "model", "speed diff (m/s)", "time to finish (s)", "left overtake ratio");
            let col = |f: &dyn Fn(&EvalReport) -> Option<MeanStd>| -> Vec<Option<MeanStd>> {
                self.rows.iter().map(|r| r.reports.get(k).and_then(f)).collect()
            };
            let cols = [
                (col(&|r| r.aggregate.speed_difference), false),
                (col(&|r| r.aggregate.time_to_finish), false),
                (col(&|r| r.aggregate.overtake_ratio), true),
            ];
            let best: Vec<Option<usize>> = cols
                .iter()
                .map(|(c, higher)| {
                    c.iter()
                        .enumerate()
                        .filter(|(i, v)| v.is_some() && self.rows[*i].trained)
                        .min_by(|a, b| {
                            let (x, y) = (a.1.unwrap().mean, b.1.unwrap().mean);
                            if *higher { y.total_cmp(&x) } else { x.total_cmp(&y) }
                        })
                        .map(|(i, _)| i)
                })
                .collect();
            for (i, row) in self.rows.iter().enumerate() {
                let name = if row.trained { row.name.clone() } else { format!("{} (untrained)", row.name) };
                let cell = |c: usize| {
                    let v = cols[c].0[i].map_or("-".to_string(), |m| m.render());
                    if best[c] == Some(i) { format!("*{v}") } else { v }
                };
                let _ = writeln!(s, "{:<34} {:>16} {:>18} {:>18}", name, cell(0), cell(1), cell(2));
            }
            s.push('\n');
        }
        s
    }
}
