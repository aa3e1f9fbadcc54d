//! Neural-network building blocks over a named parameter store.
//!
//! Modules register their parameters in a [`ParamStore`] when built and keep
//! only the names; a forward pass binds the store onto a [`Graph`] and looks
//! the variables up again.

pub mod attention;
pub mod checkpoint;
pub mod optim;

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::geom::Vec3;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use attention::{attention, attention_probs};
pub use checkpoint::{config_hash, Checkpoint};
pub use optim::AdamW;

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;
pub const RMS_EPS: f64 = 1e-12;
pub const DEFAULT_NUM_FREQS: usize = 6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name: module construction is static.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Trainable binding: every parameter becomes a graph leaf with gradients.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Params<'g> {
        Params {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                .collect(),
        }
    }

    /// Inference binding: no gradients are tracked.
    pub fn bind_const<'g>(&self, graph: &'g Graph) -> Params<'g> {
        Params {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.constant(v.clone())))
                .collect(),
        }
    }
}

pub struct Params<'g> {
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> Params<'g> {
    pub fn get(&self, name: &str) -> Var<'g> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Gradients for every bound parameter; unused ones come back as zeros.
    pub fn grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
            .collect()
    }
}

/// Registers freshly initialized parameters.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: SeededRng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: SeededRng::new(seed),
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> String {
        self.normal_std(name, shape, INIT_STD)
    }

    pub fn normal_std(&mut self, name: &str, shape: &[usize], std: f64) -> String {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.truncated_normal(std)).collect();
        self.store.insert(name, Tensor::new(shape, data));
        name.to_string()
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> String {
        self.store.insert(name, Tensor::full(shape, value));
        name.to_string()
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> String {
        self.constant(name, shape, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    Normal,
    /// Standard deviation `1/√fan_in`.
    FanIn,
    Zero,
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize, w: WeightInit) -> Self {
        let shape = [input, output];
        let weight = match w {
            WeightInit::Normal => init.normal(&format!("{name}.weight"), &shape),
            WeightInit::FanIn => init.normal_std(&format!("{name}.weight"), &shape, (input as f64).sqrt().recip()),
            WeightInit::Zero => init.zeros(&format!("{name}.weight"), &shape),
        };
        let bias = init.zeros(&format!("{name}.bias"), &[output]);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn bias_name(&self) -> &str {
        &self.bias
    }

    pub fn forward<'g>(&self, p: &Params<'g>, x: Var<'g>) -> Var<'g> {
        x.linear(p.get(&self.weight), Some(p.get(&self.bias)))
    }
}

/// Layer norm with a learned affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: String,
    bias: String,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, width: usize) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), &[width], 1.0),
            bias: init.zeros(&format!("{name}.bias"), &[width]),
        }
    }

    pub fn forward<'g>(&self, p: &Params<'g>, x: Var<'g>) -> Var<'g> {
        x.layer_norm(LN_EPS)
            .mul_row(p.get(&self.gain))
            .add_row(p.get(&self.bias))
    }
}

/// Two affine maps with a GELU between, hidden width `4·D`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, width: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), width, 4 * width, WeightInit::Normal),
            fc2: Linear::new(init, &format!("{name}.fc2"), 4 * width, width, WeightInit::Normal),
        }
    }

    pub fn forward<'g>(&self, p: &Params<'g>, x: Var<'g>) -> Var<'g> {
        self.fc2.forward(p, self.fc1.forward(p, x).gelu())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub width: usize,
    pub heads: usize,
    pub qk_norm: bool,
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct MultiheadAttention {
    pub cfg: AttentionConfig,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl MultiheadAttention {
    /// `kv_width` is the width of the key/value input rows.
    pub fn new(init: &mut Init, name: &str, cfg: AttentionConfig, kv_width: usize) -> Self {
        assert!(
            cfg.heads > 0 && cfg.width % cfg.heads == 0,
            "width {} not divisible by {} heads",
            cfg.width,
            cfg.heads
        );
        let d = cfg.width;
        Self {
            cfg,
            q: Linear::new(init, &format!("{name}.q"), d, d, WeightInit::Normal),
            k: Linear::new(init, &format!("{name}.k"), kv_width, d, WeightInit::Normal),
            v: Linear::new(init, &format!("{name}.v"), kv_width, d, WeightInit::Normal),
            o: Linear::new(init, &format!("{name}.o"), d, d, WeightInit::Normal),
        }
    }

    fn project<'g>(&self, p: &Params<'g>, q_in: Var<'g>, kv_in: Var<'g>) -> [Var<'g>; 3] {
        let mut q = self.q.forward(p, q_in);
        let mut k = self.k.forward(p, kv_in);
        if self.cfg.qk_norm {
            q = q.rms_norm(self.cfg.head_dim(), RMS_EPS);
            k = k.rms_norm(self.cfg.head_dim(), RMS_EPS);
        }
        [q, k, self.v.forward(p, kv_in)]
    }

    /// Queries `[G·A, D]` attend to keys/values `[G·B, kv_width]` group-wise.
    pub fn forward<'g>(&self, p: &Params<'g>, q_in: Var<'g>, kv_in: Var<'g>, groups: usize) -> Var<'g> {
        let [q, k, v] = self.project(p, q_in, kv_in);
        self.o.forward(p, attention(q, k, v, groups, self.cfg.heads))
    }

    /// Attention probabilities `[G·H, A, B]`, for inspection.
    pub fn probs(&self, p: &Params<'_>, q_in: Var<'_>, kv_in: Var<'_>, groups: usize) -> Tensor {
        let [q, k, _] = self.project(p, q_in, kv_in);
        attention_probs(&q.value(), &k.value(), groups, self.cfg.heads)
    }
}

/// Per-sublayer `(shift, scale, gate)` rows produced from a conditioning
/// vector by one zero-initialized affine head.
#[derive(Debug, Clone)]
pub struct AdaLn {
    head: Linear,
    width: usize,
    pub sublayers: usize,
}

pub struct Modulation<'g> {
    pub shift: Var<'g>,
    pub scale: Var<'g>,
    pub gate: Var<'g>,
}

impl AdaLn {
    pub fn new(init: &mut Init, name: &str, cond_width: usize, width: usize, sublayers: usize) -> Self {
        Self {
            head: Linear::new(init, name, cond_width, 3 * sublayers * width, WeightInit::Zero),
            width,
            sublayers,
        }
    }

    /// `cond` is a single row `[1, cond_width]`; SiLU is applied first.
    pub fn forward<'g>(&self, p: &Params<'g>, cond: Var<'g>) -> Vec<Modulation<'g>> {
        let m = self.head.forward(p, cond.silu());
        let d = self.width;
        (0..self.sublayers)
            .map(|i| {
                let o = 3 * i * d;
                Modulation {
                    shift: m.slice_cols(o, o + d),
                    scale: m.slice_cols(o + d, o + 2 * d),
                    gate: m.slice_cols(o + 2 * d, o + 3 * d),
                }
            })
            .collect()
    }
}

impl<'g> Modulation<'g> {
    /// `LN(x)·(1 + scale) + shift`.
    pub fn modulate(&self, x: Var<'g>) -> Var<'g> {
        x.layer_norm(LN_EPS)
            .mul_row(self.scale.add_scalar(1.0))
            .add_row(self.shift)
    }

    /// `x + gate ⊙ sublayer_out`.
    pub fn residual(&self, x: Var<'g>, sublayer_out: Var<'g>) -> Var<'g> {
        x.add(sublayer_out.mul_row(self.gate))
    }
}

/// `[sin(2^f π x), cos(2^f π x)]` for every coordinate and frequency,
/// width `6·num_freqs`.
pub fn fourier_features(positions: &[Vec3], num_freqs: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * 6 * num_freqs);
    for p in positions {
        for &x in p {
            for f in 0..num_freqs {
                let a = (1u64 << f) as f64 * std::f64::consts::PI * x;
                data.push(a.sin());
                data.push(a.cos());
            }
        }
    }
    Tensor::new(&[positions.len(), 6 * num_freqs], data)
}

#[derive(Debug, Clone)]
pub struct FourierEmbedding {
    pub num_freqs: usize,
    proj: Linear,
}

impl FourierEmbedding {
    pub fn new(init: &mut Init, name: &str, num_freqs: usize, out_width: usize) -> Self {
        Self {
            num_freqs,
            proj: Linear::new(init, name, 6 * num_freqs, out_width, WeightInit::Normal),
        }
    }

    pub fn forward<'g>(&self, p: &Params<'g>, positions: &[Vec3]) -> Var<'g> {
        let feats = p.get(&self.proj.weight).graph().constant(fourier_features(positions, self.num_freqs));
        self.proj.forward(p, feats)
    }
}

/// Sinusoidal embedding of a scalar timestep, width `dim` (even).
pub fn timestep_features(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        data[i] = (t * freq).cos();
        data[half + i] = (t * freq).sin();
    }
    Tensor::new(&[1, dim], data)
}
