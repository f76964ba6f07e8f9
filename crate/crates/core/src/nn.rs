//! Parameters, layers and the optimizer used by the backbone and the topic
//! network.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

/// Parameters are grouped by the sub-network they belong to; freezing and
/// gradient-flow checks work per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    BackboneBase,
    Prompt,
    MlmHead,
    Encoder,
    Importance,
    DocHead,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::BackboneBase,
        ParamGroup::Prompt,
        ParamGroup::MlmHead,
        ParamGroup::Encoder,
        ParamGroup::Importance,
        ParamGroup::DocHead,
        ParamGroup::Decoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::BackboneBase => "backbone_base",
            ParamGroup::Prompt => "prompt",
            ParamGroup::MlmHead => "mlm_head",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Importance => "importance",
            ParamGroup::DocHead => "doc_head",
            ParamGroup::Decoder => "decoder",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown parameter group '{s}'"))
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    value: Arc<Matrix>,
}

impl Param {
    pub fn value(&self) -> &Matrix {
        &self.value
    }
}

/// Owns every named tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    frozen: BTreeSet<ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            group,
            value: Arc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_arc(&self, id: ParamId) -> Arc<Matrix> {
        self.params[id.0].value.clone()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        if frozen {
            self.frozen.insert(group);
        } else {
            self.frozen.remove(&group);
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen.contains(&self.params[id.0].group)
    }

    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }
}

fn lecun<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    Matrix::randn(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// Affine map `x · W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), group, lecun(fan_in, fan_out, rng));
        let b = store.add(format!("{name}.bias"), group, Matrix::zeros(1, fan_out));
        Linear { w, b }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Linear {
            w: store.find(&format!("{name}.weight"))?,
            b: store.find(&format!("{name}.bias"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), group, Matrix::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), group, Matrix::zeros(1, dim)),
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        Some(LayerNorm {
            gain: store.find(&format!("{name}.gain"))?,
            bias: store.find(&format!("{name}.bias"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Pre-norm transformer block: full multi-head self-attention followed by a
/// GELU feed-forward layer, each wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    heads: usize,
}

impl TransformerLayer {
    pub const FF_MULT: usize = 4;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must be divisible by heads");
        TransformerLayer {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), group, dim),
            query: Linear::new(store, &format!("{name}.query"), group, dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), group, dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), group, dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), group, dim, dim, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), group, dim),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), group, dim, dim * Self::FF_MULT, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), group, dim * Self::FF_MULT, dim, rng),
            heads,
        }
    }

    pub fn bind(store: &ParamStore, name: &str, heads: usize) -> Option<Self> {
        Some(TransformerLayer {
            ln_attn: LayerNorm::bind(store, &format!("{name}.ln_attn"))?,
            query: Linear::bind(store, &format!("{name}.query"))?,
            key: Linear::bind(store, &format!("{name}.key"))?,
            value: Linear::bind(store, &format!("{name}.value"))?,
            out: Linear::bind(store, &format!("{name}.out"))?,
            ln_ff: LayerNorm::bind(store, &format!("{name}.ln_ff"))?,
            ff_in: Linear::bind(store, &format!("{name}.ff_in"))?,
            ff_out: Linear::bind(store, &format!("{name}.ff_out"))?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let dim = g.value(x).cols();
        let head_dim = dim / self.heads;
        let h = self.ln_attn.forward(g, store, x);
        let q = self.query.forward(g, store, h);
        let k = self.key.forward(g, store, h);
        let v = self.value.forward(g, store, h);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let start = head * head_dim;
            let qh = g.slice_cols(q, start, head_dim);
            let kh = g.slice_cols(k, start, head_dim);
            let vh = g.slice_cols(v, start, head_dim);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let attended = self.out.forward(g, store, merged);
        let x = g.add(x, attended);
        let h = self.ln_ff.forward(g, store, x);
        let f = self.ff_in.forward(g, store, h);
        let f = g.gelu(f);
        let f = self.ff_out.forward(g, store, f);
        g.add(x, f)
    }
}

/// Fixed sinusoidal position encodings, `len × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Linear warmup to `peak` followed by linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupLinear {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupLinear {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps);
        WarmupLinear {
            peak,
            warmup_steps,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak * step as f64 / self.warmup_steps as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            let remaining = (self.total_steps - step) as f64;
            self.peak * remaining / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, grad) in grads.params() {
            if !store.is_trainable(id) {
                continue;
            }
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                (Matrix::zeros(grad.rows(), grad.cols()), Matrix::zeros(grad.rows(), grad.cols()))
            });
            let value = store.value_mut(id);
            let it = value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(grad.data());
            for (((p, m), v), g) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
