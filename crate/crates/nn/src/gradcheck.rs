//! Central-difference gradient checks, plus a suite covering every
//! parameterized operation on random small configurations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::layers::{EncoderBlock, EncoderStack, Linear, Mlp, VisionEncoder, RASTER_H, RASTER_W};
use crate::loss::bezier_weights;
use crate::model::{Batch, Model, ModelConfig, CAR_SLOTS, FUTURE_STEPS, LANE_CLASSES, POSITION_SCALE};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;
/// Step of the five-point stencil. Its truncation error is O(h^4), so the
/// step can be large enough that roundoff stays small even for losses in
/// the thousands (squared meters).
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Entries outside both tolerances, as `(tensor, index, analytic, numeric)`.
    pub failures: Vec<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compare analytic gradients of the scalar built by `build` against
/// five-point central differences, for up to `per_tensor` random entries of every
/// tensor in `store` (all entries when the tensor is small enough).
pub fn check<F>(name: &str, store: &ParamStore, build: F, per_tensor: usize, rng: &mut ChaCha8Rng) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let pv = g.bind(s);
        let out = build(&mut g, &pv)?;
        g.check_finite()?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let pv = g.bind(store);
    let out = build(&mut g, &pv)?;
    let analytic = g.backward(out)?.param_grads(store);

    let mut report = GradCheck { name: name.into(), checked: 0, max_abs_err: 0.0, max_rel_err: 0.0, failures: Vec::new() };
    let mut probe = store.clone();
    for (id, t) in store.values.iter().enumerate() {
        let idx: Vec<usize> =
            if t.len() <= per_tensor { (0..t.len()).collect() } else { sample(rng, t.len(), per_tensor).into_vec() };
        for j in idx {
            let x = t.data[j];
            let a = analytic[id].data[j];
            // retry with a finer step where the loss bends sharply (near-constant
            // layer-norm rows); keep whichever estimate agrees better
            let (mut abs, mut rel, mut numeric) = (f64::INFINITY, f64::INFINITY, f64::NAN);
            for h in [FD_STEP, FD_STEP / 10.0] {
                let mut at = |k: f64| -> Result<f64, NnError> {
                    probe.values[id].data[j] = x + k * h;
                    eval(&probe)
                };
                let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
                probe.values[id].data[j] = x;
                let n = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
                let e = (a - n).abs();
                if e < abs {
                    (abs, numeric) = (e, n);
                    rel = e / a.abs().max(n.abs()).max(f64::MIN_POSITIVE);
                }
                if abs <= ABS_TOL || rel <= REL_TOL {
                    break;
                }
            }
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > ABS_TOL {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > REL_TOL {
                    report.failures.push((store.names[id].clone(), j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect() }
}

/// Dimensions of one random suite configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallConfig {
    pub batch: usize,
    pub t: usize,
    pub features: usize,
    pub d_embed: usize,
    pub heads_feature: usize,
    pub heads_time: usize,
    pub blocks: usize,
    pub widths: [usize; 3],
    pub hidden: usize,
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

impl SmallConfig {
    /// T <= 6, raw features <= 8, d_embed <= 16.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let t = rng.gen_range(1..=6);
        let d_embed = rng.gen_range(2..=16);
        let hf = divisors(d_embed);
        let ht = divisors(t);
        Self {
            batch: rng.gen_range(1..=3),
            t,
            features: rng.gen_range(1..=8),
            d_embed,
            heads_feature: hf[rng.gen_range(0..hf.len())],
            heads_time: ht[rng.gen_range(0..ht.len())],
            blocks: if rng.gen_bool(0.5) { 2 } else { 4 },
            widths: [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)],
            hidden: rng.gen_range(1..=8),
        }
    }
}

/// Linear probe `sum(r * y)` of a layer output.
fn probe(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var, NnError> {
    g.dot_const(y, r)
}

/// Gradient checks of every parameterized operation for one configuration.
pub fn check_config(c: &SmallConfig, seed: u64, per_tensor: usize) -> Result<Vec<GradCheck>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (b, t, f, d) = (c.batch, c.t, c.features, c.d_embed);

    // token embedding
    {
        let mut s = ParamStore::default();
        let lin = Linear::new(&mut s, &mut rng, "embed", f, d);
        let x = s.add("input", random(&mut rng, b * t, f, 1.0));
        let r = random(&mut rng, b * t, d, 1.0);
        out.push(check("embedding", &s, |g, pv| { let y = lin.forward(g, pv, pv[x])?; probe(g, y, &r) }, per_tensor, &mut rng)?);
    }
    // encoder block over time tokens (width F) and over feature tokens (width T)
    for (name, width, seq, heads) in [("encoder_block_feature", d, t, c.heads_feature), ("encoder_block_time", t, d, c.heads_time)] {
        let mut s = ParamStore::default();
        let blk = EncoderBlock::new(&mut s, &mut rng, "blk", width, heads, 2 * width);
        perturb_affine(&mut s, &mut rng);
        let x = s.add("input", random(&mut rng, b * seq, width, 1.0));
        let r = random(&mut rng, b * seq, width, 1.0);
        out.push(check(name, &s, |g, pv| { let y = blk.forward(g, pv, pv[x], b)?; probe(g, y, &r) }, per_tensor, &mut rng)?);
    }
    // swap stack
    {
        let mut s = ParamStore::default();
        let stack = EncoderStack::new(&mut s, &mut rng, c.blocks, true, t, d, c.heads_feature, c.heads_time, 2);
        perturb_affine(&mut s, &mut rng);
        let x = s.add("input", random(&mut rng, b * t, d, 1.0));
        let r = random(&mut rng, b * t, d, 1.0);
        out.push(check("swap_stack", &s, |g, pv| { let y = stack.forward(g, pv, pv[x], b)?; probe(g, y, &r) }, per_tensor, &mut rng)?);
    }
    // vision encoder
    {
        let mut s = ParamStore::default();
        let vis = VisionEncoder::new(&mut s, &mut rng, c.widths, d);
        let x = s.add("input", Tensor { rows: b, cols: RASTER_H * RASTER_W, data: (0..b * RASTER_H * RASTER_W).map(|_| rng.gen_range(0.0..1.0)).collect() });
        let r = random(&mut rng, b, d, 1.0);
        out.push(check("vision_encoder", &s, |g, pv| { let y = vis.forward(g, pv, pv[x])?; probe(g, y, &r) }, per_tensor, &mut rng)?);
    }
    // heads: two-layer MLPs, scaled, the car net mirrored
    for (name, width, scale) in [
        ("head_lane", FUTURE_STEPS * LANE_CLASSES, 1.0),
        ("head_velocity", FUTURE_STEPS, crate::model::VELOCITY_SCALE),
        ("head_bezier", 8, POSITION_SCALE),
        ("head_car_net", CAR_SLOTS * (CAR_SLOTS - 1) / 2, POSITION_SCALE),
    ] {
        let mut s = ParamStore::default();
        let head = Mlp::new(&mut s, &mut rng, "head", &[d, c.hidden, width]);
        let x = s.add("input", random(&mut rng, b, d, 1.0));
        let out_w = if name == "head_car_net" { CAR_SLOTS * CAR_SLOTS } else { width };
        let r = random(&mut rng, b, out_w, 1.0);
        out.push(check(
            name,
            &s,
            |g, pv| {
                let y = head.forward(g, pv, pv[x], false)?;
                let mut y = g.scale(y, scale);
                if name == "head_car_net" {
                    y = g.mirror_upper(y, CAR_SLOTS)?;
                }
                probe(g, y, &r)
            },
            per_tensor,
            &mut rng,
        )?);
    }
    // losses, differentiated with respect to their predictions
    {
        let mut s = ParamStore::default();
        let x = s.add("logits", random(&mut rng, b * FUTURE_STEPS, LANE_CLASSES, 3.0));
        let targets: Vec<usize> = (0..b * FUTURE_STEPS).map(|_| rng.gen_range(0..LANE_CLASSES)).collect();
        out.push(check("loss_lane", &s, |g, pv| g.cross_entropy(pv[x], &targets), per_tensor, &mut rng)?);

        let mut s = ParamStore::default();
        let x = s.add("velocity", random(&mut rng, b, FUTURE_STEPS, 20.0));
        let target = random(&mut rng, b, FUTURE_STEPS, 20.0);
        out.push(check("loss_velocity", &s, |g, pv| g.mse(pv[x], &target), per_tensor, &mut rng)?);

        let mut s = ParamStore::default();
        let x = s.add("ctrl", random(&mut rng, b, 8, 50.0));
        let target = random(&mut rng, b, 10, 50.0);
        out.push(check("loss_bezier", &s, |g, pv| g.bezier_loss(pv[x], &target, bezier_weights()), per_tensor, &mut rng)?);

        let mut s = ParamStore::default();
        let n = CAR_SLOTS * CAR_SLOTS;
        let x = s.add("car_net", random(&mut rng, b, n, 100.0));
        let target = random(&mut rng, b, n, 100.0);
        let mask: Vec<bool> = (0..b * n).map(|_| rng.gen_bool(0.3)).collect();
        out.push(check("loss_car_net", &s, |g, pv| g.masked_mse(pv[x], &target, &mask), per_tensor, &mut rng)?);
    }
    // the whole model through the summed loss
    {
        let cfg = ModelConfig {
            history: t,
            frame_features: f,
            d_embed: d,
            heads_feature: c.heads_feature,
            heads_time: c.heads_time,
            ff_mult: 2,
            blocks: c.blocks,
            vision_widths: c.widths,
            head_hidden: c.hidden,
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg, seed)?;
        perturb_affine(&mut model.params, &mut rng);
        let batch = random_batch(&mut rng, &model.config, b);
        let frames = batch.frames.clone();
        let rasters = batch.rasters.clone().expect("vision on");
        out.push(check(
            "loss_total",
            &model.params,
            |g, pv| {
                let fr = g.input(frames.clone());
                let ra = g.input(rasters.clone());
                let heads = model.forward(g, pv, fr, Some(ra), b)?;
                Ok(model.loss(g, heads, &batch)?.total)
            },
            per_tensor,
            &mut rng,
        )?);
    }
    Ok(out)
}

/// Move layer-norm gains and all biases off their 1/0 initial values so
/// the checks exercise them in general position.
fn perturb_affine(s: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (name, t) in s.names.iter().zip(s.values.iter_mut()) {
        if name.ends_with(".g") || name.ends_with(".b") {
            t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
}

/// Random batch with plausible target ranges.
pub fn random_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, size: usize) -> Batch {
    let n = CAR_SLOTS * CAR_SLOTS;
    Batch {
        size,
        frames: random(rng, size * cfg.history, cfg.frame_features, 1.0),
        rasters: cfg.use_vision.then(|| Tensor {
            rows: size,
            cols: RASTER_H * RASTER_W,
            data: (0..size * RASTER_H * RASTER_W).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }),
        lane: (0..size * FUTURE_STEPS).map(|_| rng.gen_range(0..LANE_CLASSES)).collect(),
        velocities: Tensor { rows: size, cols: FUTURE_STEPS, data: (0..size * FUTURE_STEPS).map(|_| rng.gen_range(0.0..22.0)).collect() },
        points: random(rng, size, 10, 40.0),
        distances: Tensor { rows: size, cols: n, data: (0..size * n).map(|_| rng.gen_range(0.0..150.0)).collect() },
        mask: (0..size * n).map(|_| rng.gen_bool(0.4)).collect(),
    }
}

/// `configs` random configurations from `seed`.
pub fn suite(seed: u64, configs: usize, per_tensor: usize) -> Result<Vec<(SmallConfig, Vec<GradCheck>)>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..configs)
        .map(|i| {
            let c = SmallConfig::random(&mut rng);
            Ok((c, check_config(&c, seed.wrapping_add(i as u64), per_tensor)?))
        })
        .collect()
}
