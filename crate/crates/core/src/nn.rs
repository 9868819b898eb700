//! Named parameter storage, standard layers and the Adam optimizer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autograd::{AttnSpec, Tape, Var};
use crate::math;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(id, _, _)| id).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub fn uniform_tensor(rng: &mut SeededRng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng::uniform(rng, -bound, bound)).collect())
}

pub fn normal_tensor(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| std * rng::normal(rng)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, input: usize, output: usize) -> Self {
        Self::build(store, rng, name, input, output, true)
    }

    pub fn no_bias(store: &mut ParamStore, rng: &mut SeededRng, name: &str, input: usize, output: usize) -> Self {
        Self::build(store, rng, name, input, output, false)
    }

    fn build(store: &mut ParamStore, rng: &mut SeededRng, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let bound = 1.0 / math::sqrt(input as f64);
        let w = store.add(name.to_string() + ".w", uniform_tensor(rng, input, output, bound));
        let b = bias.then(|| store.add(name.to_string() + ".b", uniform_tensor(rng, 1, output, bound)));
        Linear { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &alloc::format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x);
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add(name.to_string() + ".g", Tensor::filled(1, width, 1.0)),
            bias: store.add(name.to_string() + ".b", Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let n = tape.layer_norm_rows(x);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Gated recurrent unit with reset, update and candidate gates.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub width: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, input: usize, width: usize) -> Self {
        GruCell {
            input: Linear::new(store, rng, &(name.to_string() + ".i"), input, 3 * width),
            hidden: Linear::new(store, rng, &(name.to_string() + ".h"), width, 3 * width),
            width,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        let w = self.width;
        let gi = self.input.forward(tape, store, x);
        let gh = self.hidden.forward(tape, store, h);
        let (ir, iz, inn) = (tape.slice_cols(gi, 0, w), tape.slice_cols(gi, w, w), tape.slice_cols(gi, 2 * w, w));
        let (hr, hz, hn) = (tape.slice_cols(gh, 0, w), tape.slice_cols(gh, w, w), tape.slice_cols(gh, 2 * w, w));
        let r = tape.add(ir, hr);
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz);
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn);
        let n = tape.add(inn, rn);
        let n = tape.tanh(n);
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }
}

/// Pre-norm transformer block: multi-head self-attention then a GELU
/// feed-forward layer, each with a residual connection.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
    pub width: usize,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, width: usize, heads: usize, ff: usize) -> Self {
        let n = |s: &str| alloc::format!("{name}.{s}");
        TransformerBlock {
            ln1: LayerNorm::new(store, &n("ln1"), width),
            q: Linear::new(store, rng, &n("q"), width, width),
            k: Linear::new(store, rng, &n("k"), width, width),
            v: Linear::new(store, rng, &n("v"), width, width),
            o: Linear::new(store, rng, &n("o"), width, width),
            ln2: LayerNorm::new(store, &n("ln2"), width),
            ff1: Linear::new(store, rng, &n("ff1"), width, ff),
            ff2: Linear::new(store, rng, &n("ff2"), ff, width),
            heads,
            width,
        }
    }

    /// `segments` partition the rows of `x`; attention stays within a segment.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, segments: &[core::ops::Range<usize>]) -> Var {
        let h = self.ln1.forward(tape, store, x);
        let q = self.q.forward(tape, store, h);
        let k = self.k.forward(tape, store, h);
        let v = self.v.forward(tape, store, h);
        let spec = AttnSpec {
            q_segments: segments.to_vec(),
            kv_segments: segments.to_vec(),
            heads: self.heads,
            scale: 1.0 / math::sqrt((self.width / self.heads) as f64),
            key_mask: None,
        };
        let a = tape.attention(q, k, v, spec);
        let a = self.o.forward(tape, store, a);
        let x = tape.add(x, a);
        let h = self.ln2.forward(tape, store, x);
        let f = self.ff1.forward(tape, store, h);
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, store, f);
        tape.add(x, f)
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
    /// Optional global gradient-norm clip.
    pub clip: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip: None }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    steps: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, state: Vec::new() }
    }

    /// Apply one update to every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, &Tensor)]) {
        let c = self.config.clone();
        let scale = match c.clip {
            Some(max) => {
                let norm = math::sqrt(grads.iter().map(|(_, g)| g.data.iter().map(|x| x * x).sum::<f64>()).sum());
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for &(id, g) in grads {
            if self.state.len() <= id.0 {
                self.state.resize(id.0 + 1, None);
            }
            let p = store.get_mut(id);
            let st = self.state[id.0].get_or_insert_with(|| Moments {
                m: Tensor::zeros(p.rows, p.cols),
                v: Tensor::zeros(p.rows, p.cols),
                steps: 0,
            });
            st.steps += 1;
            let b1t = 1.0 - math::powi(c.beta1, st.steps as i32);
            let b2t = 1.0 - math::powi(c.beta2, st.steps as i32);
            for i in 0..p.data.len() {
                let gi = g.data[i] * scale;
                st.m.data[i] = c.beta1 * st.m.data[i] + (1.0 - c.beta1) * gi;
                st.v.data[i] = c.beta2 * st.v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = st.m.data[i] / b1t;
                let vh = st.v.data[i] / b2t;
                p.data[i] -= c.lr * (mh / (math::sqrt(vh) + c.eps) + c.weight_decay * p.data[i]);
            }
        }
    }
}
