use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::layers::{EncoderStack, Linear, Mlp, VisionEncoder, RASTER_H, RASTER_W};
use crate::loss::bezier_weights;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

pub const FUTURE_STEPS: usize = 5;
pub const LANE_CLASSES: usize = 4;
/// Distance-matrix side: 20 object slots plus the ego.
pub const CAR_SLOTS: usize = 21;
/// Heads emit normalized values; these bring them back to m/s and m.
pub const VELOCITY_SCALE: f64 = 22.2;
pub const POSITION_SCALE: f64 = 100.0;
pub const RASTER_PIXELS: usize = RASTER_H * RASTER_W;

/// The five compared architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    Mlp,
    Transformer,
    TransformerAux,
    TransformerSwap,
    TransformerSwapAux,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Mlp, Ablation::Transformer, Ablation::TransformerAux, Ablation::TransformerSwap, Ablation::TransformerSwapAux];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Mlp => "MLP (Baseline)",
            Ablation::Transformer => "Transformer",
            Ablation::TransformerAux => "Transformer + Aux.",
            Ablation::TransformerSwap => "Transformer + Swap",
            Ablation::TransformerSwapAux => "Transformer + Swap + Aux. (full)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Ablation::Mlp => "mlp",
            Ablation::Transformer => "transformer",
            Ablation::TransformerAux => "transformer_aux",
            Ablation::TransformerSwap => "transformer_swap",
            Ablation::TransformerSwapAux => "swap_aux",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.slug() == s)
    }

    /// (mlp_baseline, use_swap, use_aux)
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Ablation::Mlp => (true, false, false),
            Ablation::Transformer => (false, false, false),
            Ablation::TransformerAux => (false, false, true),
            Ablation::TransformerSwap => (false, true, false),
            Ablation::TransformerSwapAux => (false, true, true),
        }
    }

    /// `base` with this row's flags.
    pub fn config(self, base: &ModelConfig) -> ModelConfig {
        let (mlp_baseline, use_swap, use_aux) = self.flags();
        ModelConfig { mlp_baseline, use_swap, use_aux, ..base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub use_swap: bool,
    pub use_aux: bool,
    pub mlp_baseline: bool,
    /// Frames per sequence (T).
    pub history: usize,
    /// Raw per-frame feature count before embedding.
    pub frame_features: usize,
    /// Token width (F).
    pub d_embed: usize,
    pub heads_feature: usize,
    /// Heads of the blocks that attend over the feature axis (width T).
    pub heads_time: usize,
    pub ff_mult: usize,
    pub blocks: usize,
    pub use_vision: bool,
    pub vision_widths: [usize; 3],
    pub mlp_hidden: Vec<usize>,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            use_swap: true,
            use_aux: true,
            mlp_baseline: false,
            history: 10,
            frame_features: 134,
            d_embed: 64,
            heads_feature: 4,
            heads_time: 2,
            ff_mult: 4,
            blocks: 4,
            use_vision: true,
            vision_widths: [8, 16, 32],
            mlp_hidden: vec![512, 256, 128],
            head_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn ablation(&self) -> Option<Ablation> {
        Ablation::ALL.into_iter().find(|a| a.flags() == (self.mlp_baseline, self.use_swap, self.use_aux))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Config(m));
        if self.ablation().is_none() {
            return err(format!(
                "flags mlp_baseline={} use_swap={} use_aux={} match no ablation row",
                self.mlp_baseline, self.use_swap, self.use_aux
            ));
        }
        if self.history == 0 || self.frame_features == 0 || self.d_embed == 0 || self.head_hidden == 0 {
            return err("zero-sized dimension".into());
        }
        if self.mlp_baseline {
            if self.mlp_hidden.is_empty() || self.mlp_hidden.contains(&0) {
                return err("MLP baseline needs non-empty hidden widths".into());
            }
        } else {
            if self.blocks == 0 || self.ff_mult == 0 {
                return err("transformer needs at least one block".into());
            }
            if self.heads_feature == 0 || self.d_embed % self.heads_feature != 0 {
                return err(format!("d_embed {} not divisible by {} heads", self.d_embed, self.heads_feature));
            }
            if self.use_swap {
                if self.blocks % 2 != 0 {
                    return err(format!("swap stack needs an even block count, got {}", self.blocks));
                }
                if self.heads_time == 0 || self.history % self.heads_time != 0 {
                    return err(format!("history {} not divisible by {} heads", self.history, self.heads_time));
                }
            }
        }
        if self.use_vision && self.vision_widths.contains(&0) {
            return err("zero vision width".into());
        }
        Ok(())
    }

    fn pooled_width(&self) -> usize {
        if self.mlp_baseline {
            *self.mlp_hidden.last().expect("validated")
        } else {
            self.d_embed
        }
    }
}

/// One training/evaluation batch in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `[size*history, frame_features]`, oldest frame first per sample.
    pub frames: Tensor,
    /// `[size, 5000]` in [0, 1]: the current frame's raster.
    pub rasters: Option<Tensor>,
    /// `size*5` class indices.
    pub lane: Vec<usize>,
    /// `[size, 5]` m/s.
    pub velocities: Tensor,
    /// `[size, 10]` future points in the ego frame, m.
    pub points: Tensor,
    /// `[size, 441]` pairwise distances, m.
    pub distances: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `[batch, 20]`: 5 steps x 4 classes.
    pub lane: Var,
    /// `[batch, 5]` m/s.
    pub velocity: Var,
    /// `[batch, 8]` m.
    pub bezier: Var,
    /// `[batch, 441]` m.
    pub car_net: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs {
    pub lane_logits: [[f64; LANE_CLASSES]; FUTURE_STEPS],
    pub velocities: [f64; FUTURE_STEPS],
    pub bezier_ctrl: [f64; 8],
    pub car_net: Vec<f64>,
}

impl HeadOutputs {
    pub fn lane_probs(&self, step: usize) -> [f64; LANE_CLASSES] {
        let row = self.lane_logits[step];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = row.map(|v| (v - m).exp());
        let z: f64 = e.iter().sum();
        e.map(|v| v / z)
    }

    pub fn lane_class(&self, step: usize) -> usize {
        argmax(&self.lane_logits[step])
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lane: f64,
    pub velocity: f64,
    pub bezier: Option<f64>,
    pub car_net: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub lane: Var,
    pub velocity: Var,
    pub bezier: Option<Var>,
    pub car_net: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq)]
enum Trunk {
    Encoder(EncoderStack),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    vision: Option<VisionEncoder>,
    embed: Linear,
    trunk: Trunk,
    lane_head: Mlp,
    velocity_head: Mlp,
    bezier_head: Mlp,
    car_head: Mlp,
}

impl Model {
    /// Fresh model; `seed` fixes every initial weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let vision = c.use_vision.then(|| VisionEncoder::new(&mut store, &mut rng, c.vision_widths, c.d_embed));
        let token_in = c.frame_features + if c.use_vision { c.d_embed } else { 0 };
        let embed = Linear::new(&mut store, &mut rng, "embed", token_in, c.d_embed);
        let trunk = if c.mlp_baseline {
            let mut widths = vec![c.history * c.d_embed];
            widths.extend(&c.mlp_hidden);
            Trunk::Mlp(Mlp::new(&mut store, &mut rng, "mlp", &widths))
        } else {
            Trunk::Encoder(EncoderStack::new(
                &mut store,
                &mut rng,
                c.blocks,
                c.use_swap,
                c.history,
                c.d_embed,
                c.heads_feature,
                c.heads_time,
                c.ff_mult,
            ))
        };
        let p = c.pooled_width();
        let h = c.head_hidden;
        let mut head = |name: &str, out: usize| Mlp::new(&mut store, &mut rng, name, &[p, h, out]);
        let lane_head = head("head.lane", FUTURE_STEPS * LANE_CLASSES);
        let velocity_head = head("head.velocity", FUTURE_STEPS);
        let bezier_head = head("head.bezier", 8);
        let car_head = head("head.car_net", CAR_SLOTS * (CAR_SLOTS - 1) / 2);
        Ok(Self { config, params: store, vision, embed, trunk, lane_head, velocity_head, bezier_head, car_head })
    }

    /// Rebuild a model around stored parameters (matched by name).
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self, NnError> {
        let mut m = Self::new(config, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), NnError> {
        let c = &self.config;
        if batch.frames.shape() != [batch.size * c.history, c.frame_features] {
            return Err(NnError::Shape(format!(
                "frames {:?}, model expects [{}, {}]",
                batch.frames.shape(),
                batch.size * c.history,
                c.frame_features
            )));
        }
        if c.use_vision && batch.rasters.as_ref().map(Tensor::shape) != Some([batch.size, RASTER_PIXELS]) {
            return Err(NnError::Shape("model uses vision but the batch has no rasters of the right size".into()));
        }
        Ok(())
    }

    /// Heads for `batch` samples of `[batch*history, frame_features]` frames.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &[Var],
        frames: Var,
        rasters: Option<Var>,
        batch: usize,
    ) -> Result<HeadVars, NnError> {
        let c = &self.config;
        let tokens_in = match (&self.vision, rasters) {
            (Some(v), Some(r)) => {
                // one embedding of the current raster, shared by every frame
                let e = v.forward(g, pv, r)?;
                let e = g.repeat_rows(e, c.history);
                g.concat_cols(frames, e)?
            }
            (Some(_), None) => return Err(NnError::Shape("model uses vision but no raster was given".into())),
            (None, _) => frames,
        };
        let tokens = self.embed.forward(g, pv, tokens_in)?;
        let pooled = match &self.trunk {
            Trunk::Encoder(stack) => {
                let h = stack.forward(g, pv, tokens, batch)?;
                g.mean_groups(h, batch)?
            }
            Trunk::Mlp(mlp) => {
                let flat = g.reshape(tokens, batch, c.history * c.d_embed)?;
                mlp.forward(g, pv, flat, true)?
            }
        };
        let lane = self.lane_head.forward(g, pv, pooled, false)?;
        let velocity = self.velocity_head.forward(g, pv, pooled, false)?;
        let velocity = g.scale(velocity, VELOCITY_SCALE);
        let bezier = self.bezier_head.forward(g, pv, pooled, false)?;
        let bezier = g.scale(bezier, POSITION_SCALE);
        let upper = self.car_head.forward(g, pv, pooled, false)?;
        let upper = g.scale(upper, POSITION_SCALE);
        let car_net = g.mirror_upper(upper, CAR_SLOTS)?;
        Ok(HeadVars { lane, velocity, bezier, car_net })
    }

    /// Lane cross-entropy plus velocity MSE, plus the Bezier and car-net
    /// terms when `use_aux` is set; the total is their plain sum.
    pub fn loss(&self, g: &mut Graph, heads: HeadVars, batch: &Batch) -> Result<LossVars, NnError> {
        let logits = g.reshape(heads.lane, batch.size * FUTURE_STEPS, LANE_CLASSES)?;
        let lane = g.cross_entropy(logits, &batch.lane)?;
        // Regression terms are measured in the normalized output units so the
        // m² car-net term does not drown the lane classifier.
        let v_norm = 1.0 / (VELOCITY_SCALE * VELOCITY_SCALE);
        let p_norm = 1.0 / (POSITION_SCALE * POSITION_SCALE);
        let velocity = g.mse(heads.velocity, &batch.velocities)?;
        let velocity = g.scale(velocity, v_norm);
        let (bezier, car_net) = if self.config.use_aux {
            let b = g.bezier_loss(heads.bezier, &batch.points, bezier_weights())?;
            let c = g.masked_mse(heads.car_net, &batch.distances, &batch.mask)?;
            (Some(g.scale(b, p_norm)), Some(g.scale(c, p_norm)))
        } else {
            (None, None)
        };
        let mut terms = vec![lane, velocity];
        terms.extend(bezier);
        terms.extend(car_net);
        let total = g.sum(&terms)?;
        Ok(LossVars { lane, velocity, bezier, car_net, total })
    }

    fn inputs(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Option<Var>), NnError> {
        self.check_batch(batch)?;
        let frames = g.input(batch.frames.clone());
        let rasters = match (&batch.rasters, self.config.use_vision) {
            (Some(r), true) => Some(g.input(r.clone())),
            _ => None,
        };
        Ok((frames, rasters))
    }

    /// Losses and parameter gradients for one batch.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(LossBreakdown, Vec<Tensor>), NnError> {
        let mut g = Graph::new();
        let pv = g.bind(&self.params);
        let (frames, rasters) = self.inputs(&mut g, batch)?;
        let heads = self.forward(&mut g, &pv, frames, rasters, batch.size)?;
        let l = self.loss(&mut g, heads, batch)?;
        let grads = g.backward(l.total)?;
        Ok((breakdown(&g, &l), grads.param_grads(&self.params)))
    }

    /// Losses without a backward pass.
    pub fn evaluate_loss(&self, batch: &Batch) -> Result<(LossBreakdown, Vec<HeadOutputs>), NnError> {
        let mut g = Graph::new();
        let pv = g.bind(&self.params);
        let (frames, rasters) = self.inputs(&mut g, batch)?;
        let heads = self.forward(&mut g, &pv, frames, rasters, batch.size)?;
        let l = self.loss(&mut g, heads, batch)?;
        g.check_finite()?;
        Ok((breakdown(&g, &l), collect_outputs(&g, heads, batch.size)))
    }

    /// Head outputs for `size` samples; `rasters` required when the model
    /// uses vision.
    pub fn predict(&self, frames: &Tensor, rasters: Option<&Tensor>, size: usize) -> Result<Vec<HeadOutputs>, NnError> {
        let c = &self.config;
        if frames.shape() != [size * c.history, c.frame_features] {
            return Err(NnError::Shape(format!("frames {:?} for {size} samples", frames.shape())));
        }
        let mut g = Graph::new();
        let pv = g.bind(&self.params);
        let f = g.input(frames.clone());
        let r = match rasters {
            Some(r) if c.use_vision => Some(g.input(r.clone())),
            _ => None,
        };
        let heads = self.forward(&mut g, &pv, f, r, size)?;
        g.check_finite()?;
        Ok(collect_outputs(&g, heads, size))
    }
}

fn breakdown(g: &Graph, l: &LossVars) -> LossBreakdown {
    LossBreakdown {
        lane: g.value(l.lane).item(),
        velocity: g.value(l.velocity).item(),
        bezier: l.bezier.map(|v| g.value(v).item()),
        car_net: l.car_net.map(|v| g.value(v).item()),
        total: g.value(l.total).item(),
    }
}

fn collect_outputs(g: &Graph, h: HeadVars, size: usize) -> Vec<HeadOutputs> {
    (0..size)
        .map(|n| {
            let lane = g.value(h.lane).row(n);
            let mut lane_logits = [[0.0; LANE_CLASSES]; FUTURE_STEPS];
            for (k, row) in lane_logits.iter_mut().enumerate() {
                row.copy_from_slice(&lane[k * LANE_CLASSES..(k + 1) * LANE_CLASSES]);
            }
            HeadOutputs {
                lane_logits,
                velocities: g.value(h.velocity).row(n).try_into().expect("5 velocities"),
                bezier_ctrl: g.value(h.bezier).row(n).try_into().expect("8 control values"),
                car_net: g.value(h.car_net).row(n).to_vec(),
            }
        })
        .collect()
}
