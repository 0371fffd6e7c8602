use rand_chacha::ChaCha8Rng;

use crate::graph::{ConvGeom, Graph, Var, KERNEL};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> Self {
        let w = store.glorot(rng, format!("{name}.w"), din, dout);
        let b = store.constant(format!("{name}.b"), 1, dout, 0.0);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var, NnError> {
        g.linear(x, pv[self.w], Some(pv[self.b]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let g = store.constant(format!("{name}.g"), 1, d, 1.0);
        let b = store.constant(format!("{name}.b"), 1, d, 0.0);
        Self { g, b }
    }

    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var, NnError> {
        g.layer_norm(x, pv[self.g], pv[self.b])
    }
}

/// Pre-norm transformer encoder block:
/// `h = x + Wo·MHA(LN(x))`, `y = h + FF(LN(h))`, `FF = W2·gelu(W1·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub d: usize,
    pub heads: usize,
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, ff: usize) -> Self {
        Self {
            d,
            heads,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, ff),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), ff, d),
        }
    }

    /// `x` is `[groups*s, d]`.
    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: Var, groups: usize) -> Result<Var, NnError> {
        Ok(self.forward_traced(g, pv, x, groups)?.0)
    }

    /// Also returns the attention node, whose weights are available through
    /// [`Graph::attention_probs`].
    pub fn forward_traced(&self, g: &mut Graph, pv: &[Var], x: Var, groups: usize) -> Result<(Var, Var), NnError> {
        let width = g.value(x).cols;
        if width != self.d {
            return Err(NnError::Config(format!("encoder block of width {} fed width {width}", self.d)));
        }
        let n = self.ln1.forward(g, pv, x)?;
        let q = self.q.forward(g, pv, n)?;
        let k = self.k.forward(g, pv, n)?;
        let v = self.v.forward(g, pv, n)?;
        let att = g.attention(q, k, v, groups, self.heads)?;
        let o = self.o.forward(g, pv, att)?;
        let h = g.add(x, o)?;
        let n2 = self.ln2.forward(g, pv, h)?;
        let f = self.ff1.forward(g, pv, n2)?;
        let f = g.gelu(f);
        let f = self.ff2.forward(g, pv, f)?;
        Ok((g.add(h, f)?, att))
    }
}

/// Sinusoidal position table `[t, f]`: `sin(p / 10000^(2i/f))` in even
/// columns, `cos` of the same angle in odd columns.
pub fn positional_encoding(t: usize, f: usize) -> Tensor {
    let mut pe = Tensor::zeros(t, f);
    for p in 0..t {
        for c in 0..f {
            let i = (c / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / f as f64);
            pe.data[p * f + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn tiled(table: &Tensor, times: usize) -> Tensor {
    let mut data = Vec::with_capacity(table.len() * times);
    for _ in 0..times {
        data.extend_from_slice(&table.data);
    }
    Tensor { rows: table.rows * times, cols: table.cols, data }
}

/// Block callback for [`swap_forward`]: `(graph, block index, input, groups)`.
pub type BlockFn<'a> = dyn FnMut(&mut Graph, usize, Var, usize) -> Result<Var, NnError> + 'a;

/// Adds positional encoding once, then runs `n_blocks` blocks. With `swap`,
/// block n (1-based) runs on `H` when n is odd and on `H^T` when n is even,
/// and its output is transposed back, so the result has the input shape.
/// Without `swap` every block runs on `H`.
///
/// `x` is `[batch*t, f]`.
pub fn swap_forward(
    g: &mut Graph,
    x: Var,
    batch: usize,
    n_blocks: usize,
    swap: bool,
    block: &mut BlockFn<'_>,
) -> Result<Var, NnError> {
    let [rows, f] = g.value(x).shape();
    if batch == 0 || rows % batch != 0 {
        return Err(NnError::Shape(format!("swap_forward: {rows} rows for batch {batch}")));
    }
    if swap && n_blocks % 2 != 0 {
        return Err(NnError::Config(format!("swap stack needs an even block count, got {n_blocks}")));
    }
    let t = rows / batch;
    let pe = tiled(&positional_encoding(t, f), batch);
    let mut h = g.add_const(x, &pe)?;
    for n in 1..=n_blocks {
        if swap && n % 2 == 0 {
            let ht = g.transpose(h, batch)?;
            let ht = block(g, n - 1, ht, batch)?;
            h = g.transpose(ht, batch)?;
        } else {
            h = block(g, n - 1, h, batch)?;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
    pub swap: bool,
}

impl EncoderStack {
    /// With `swap`, even (1-based) blocks have width `t` and `heads_time`
    /// heads; the rest have width `f` and `heads_feature` heads.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        n_blocks: usize,
        swap: bool,
        t: usize,
        f: usize,
        heads_feature: usize,
        heads_time: usize,
        ff_mult: usize,
    ) -> Self {
        let blocks = (1..=n_blocks)
            .map(|n| {
                let (d, heads) = if swap && n % 2 == 0 { (t, heads_time) } else { (f, heads_feature) };
                EncoderBlock::new(store, rng, &format!("enc{n}"), d, heads, ff_mult * d)
            })
            .collect();
        Self { blocks, swap }
    }

    pub fn forward(&self, g: &mut Graph, pv: &[Var], x: Var, batch: usize) -> Result<Var, NnError> {
        let blocks = &self.blocks;
        swap_forward(g, x, batch, blocks.len(), self.swap, &mut |g, i, h, groups| blocks[i].forward(g, pv, h, groups))
    }
}

/// Linear layers with GELU between them (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: &[usize]) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1])).collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, pv: &[Var], mut x: Var, gelu_last: bool) -> Result<Var, NnError> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, pv, x)?;
            if gelu_last || i + 1 < self.layers.len() {
                x = g.gelu(x);
            }
        }
        Ok(x)
    }
}

pub const RASTER_H: usize = 100;
pub const RASTER_W: usize = 50;

/// Three stride-2 3x3 convolutions with GELU, global average pool, then a
/// linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionEncoder {
    convs: Vec<(ParamId, ParamId, ConvGeom)>,
    proj: Linear,
}

impl VisionEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, widths: [usize; 3], out: usize) -> Self {
        let (mut cin, mut h, mut w) = (1, RASTER_H, RASTER_W);
        let mut convs = Vec::new();
        for (i, &cout) in widths.iter().enumerate() {
            let geom = ConvGeom { cin, h, w, cout, stride: 2, pad: 1 };
            let patch = cin * KERNEL * KERNEL;
            let wid = store.glorot_fan(rng, format!("vision.conv{i}.w"), cout, patch, patch, cout * KERNEL * KERNEL);
            let bid = store.constant(format!("vision.conv{i}.b"), 1, cout, 0.0);
            convs.push((wid, bid, geom));
            (cin, h, w) = (cout, geom.out_h(), geom.out_w());
        }
        let proj = Linear::new(store, rng, "vision.proj", cin, out);
        Self { convs, proj }
    }

    /// `raster` is `[batch, 100*50]` with pixels scaled to [0, 1].
    pub fn forward(&self, g: &mut Graph, pv: &[Var], raster: Var) -> Result<Var, NnError> {
        let width = g.value(raster).cols;
        if width != RASTER_H * RASTER_W {
            return Err(NnError::Shape(format!("raster of {width} pixels, expected {}", RASTER_H * RASTER_W)));
        }
        let mut x = raster;
        for &(w, b, geom) in &self.convs {
            x = g.conv2d(x, pv[w], pv[b], geom)?;
            x = g.gelu(x);
        }
        let channels = self.convs.last().map_or(1, |c| c.2.cout);
        let pooled = g.channel_mean(x, channels)?;
        self.proj.forward(g, pv, pooled)
    }
}
