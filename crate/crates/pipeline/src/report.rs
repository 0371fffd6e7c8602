use serde::{Deserialize, Serialize};

/// Mean and sample standard deviation (0 for fewer than two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Some(Self { mean, std: var.sqrt(), n })
    }

    pub fn render(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Per-density summary of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub speed_difference: Option<MeanStd>,
    pub time_to_finish: Option<MeanStd>,
    /// Over episodes with at least one encounter.
    pub overtake_ratio: Option<MeanStd>,
    pub distance: Option<MeanStd>,
    pub finished: usize,
    pub collisions: usize,
}

pub(crate) fn render_opt(v: &Option<MeanStd>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), MeanStd::render)
}
