//! Policy network: a shared MLP trunk feeding a lateral and a longitudinal
//! categorical head plus four per-reward-component value heads.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, Tape, Var};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub features: FeatureConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            hidden: vec![256, 256],
            activation: Activation::Tanh,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn n_x(&self) -> usize {
        self.features.grid.n_x
    }

    pub fn n_y(&self) -> usize {
        self.features.grid.n_y
    }
}

/// Value components in head order.
pub const VALUE_COMPONENTS: [&str; 4] = ["sc", "pd", "hd", "dc"];

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn uniform(n_in: usize, n_out: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let mut l = Self::zeros(n_in, n_out);
        for w in &mut l.w {
            *w = rng.gen_range(-limit..limit);
        }
        l
    }

    fn forward(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            y.push(acc);
        }
    }

    /// Accumulates parameter gradients into `grad` and `W^T g` into `dx`.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        for o in 0..self.n_out {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            grad.b[o] += go;
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += go * x[i];
                dx[i] += go * row[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub trunk: Vec<Linear>,
    pub head_x: Linear,
    pub head_y: Linear,
    /// Four outputs ordered as [`VALUE_COMPONENTS`].
    pub head_v: Linear,
}

/// Gradients share the parameter layout.
pub type Gradients = PolicyParams;

impl PolicyParams {
    pub fn zeros(cfg: &PolicyConfig) -> Self {
        let mut trunk = Vec::with_capacity(cfg.hidden.len());
        let mut n_in = cfg.input_dim();
        for &h in &cfg.hidden {
            trunk.push(Linear::zeros(n_in, h));
            n_in = h;
        }
        Self {
            trunk,
            head_x: Linear::zeros(n_in, cfg.n_x()),
            head_y: Linear::zeros(n_in, cfg.n_y()),
            head_v: Linear::zeros(n_in, 4),
        }
    }

    /// Glorot-uniform trunk (He-uniform for ReLU) with near-zero heads so the
    /// initial policy is close to uniform.
    pub fn init(cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        let mut trunk = Vec::with_capacity(cfg.hidden.len());
        let mut n_in = cfg.input_dim();
        for &h in &cfg.hidden {
            let limit = match cfg.activation {
                Activation::Tanh => (6.0 / (n_in + h) as f64).sqrt(),
                Activation::Relu => (6.0 / n_in as f64).sqrt(),
            };
            trunk.push(Linear::uniform(n_in, h, limit, rng));
            n_in = h;
        }
        let head = |n_out: usize, rng: &mut _| {
            Linear::uniform(n_in, n_out, 0.01 * (6.0 / (n_in + n_out) as f64).sqrt(), rng)
        };
        let head_x = head(cfg.n_x(), rng);
        let head_y = head(cfg.n_y(), rng);
        let head_v = head(4, rng);
        Self {
            trunk,
            head_x,
            head_y,
            head_v,
        }
    }

    pub fn layers(&self) -> Vec<(String, &Linear)> {
        let mut out: Vec<(String, &Linear)> = self
            .trunk
            .iter()
            .enumerate()
            .map(|(k, l)| (format!("trunk.{k}"), l))
            .collect();
        out.push(("head_x".into(), &self.head_x));
        out.push(("head_y".into(), &self.head_y));
        out.push(("value".into(), &self.head_v));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = self.trunk.iter_mut().collect();
        out.push(&mut self.head_x);
        out.push(&mut self.head_y);
        out.push(&mut self.head_v);
        out
    }

    /// Named tensors with shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push((format!("{name}.w"), vec![l.n_out, l.n_in], l.w.as_slice()));
            out.push((format!("{name}.b"), vec![l.n_out], l.b.as_slice()));
        }
        out
    }

    /// Mutable tensors in the order of [`PolicyParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.layers_mut() {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.n_in, l.n_out);
        Self {
            trunk: self.trunk.iter().map(z).collect(),
            head_x: z(&self.head_x),
            head_y: z(&self.head_y),
            head_v: z(&self.head_v),
        }
    }

    pub fn same_shape(&self, other: &PolicyParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.1 == y.1)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of all tensors.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn add_scaled(&mut self, other: &PolicyParams, c: f64) {
        let src: Vec<f64> = other.to_flat();
        let mut k = 0;
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v += c * src[k];
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistributions {
    pub p_x: Vec<f64>,
    pub p_y: Vec<f64>,
    pub logp_x: Vec<f64>,
    pub logp_y: Vec<f64>,
}

impl ActionDistributions {
    pub fn from_logits(logits_x: &[f64], logits_y: &[f64]) -> Self {
        let (p_x, logp_x) = softmax(logits_x);
        let (p_y, logp_y) = softmax(logits_y);
        Self {
            p_x,
            p_y,
            logp_x,
            logp_y,
        }
    }
}

/// Probabilities and log-probabilities; the latter are `z - lse(z)` so they
/// agree bit-for-bit with the loss graph.
pub fn softmax(z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lse = logsumexp(z);
    let logp: Vec<f64> = z.iter().map(|v| v - lse).collect();
    (logp.iter().map(|l| l.exp()).collect(), logp)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueEstimates {
    pub v_sc: f64,
    pub v_pd: f64,
    pub v_hd: f64,
    pub v_dc: f64,
}

impl ValueEstimates {
    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            v_sc: v[0],
            v_pd: v[1],
            v_hd: v[2],
            v_dc: v[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.v_sc, self.v_pd, self.v_hd, self.v_dc]
    }

    pub fn v_x(&self) -> f64 {
        self.v_sc + self.v_pd + self.v_hd
    }

    pub fn v_y(&self) -> f64 {
        self.v_dc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logits_x: Vec<f64>,
    pub logits_y: Vec<f64>,
    pub values: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub params: PolicyParams,
}

struct SampleCache {
    input: Vec<f64>,
    /// Post-activation output of each trunk layer.
    acts: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, params: PolicyParams) -> Result<Self> {
        let want = PolicyParams::zeros(&cfg);
        if !want.same_shape(&params) {
            return Err(Error::shape(
                format!("{} parameters for the configured network", want.num_params()),
                format!("{} parameters", params.num_params()),
            ));
        }
        Ok(Self { cfg, params })
    }

    pub fn zeros(cfg: PolicyConfig) -> Self {
        let params = PolicyParams::zeros(&cfg);
        Self { cfg, params }
    }

    pub fn init(cfg: PolicyConfig, rng: &mut impl Rng) -> Self {
        let params = PolicyParams::init(&cfg, rng);
        Self { cfg, params }
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        let want = self.params.trunk.first().map_or(self.params.head_x.n_in, |l| l.n_in);
        if features.len() != want {
            return Err(Error::shape(format!("{want} features"), format!("{} features", features.len())));
        }
        Ok(())
    }

    fn run(&self, features: &[f64]) -> (HeadOutputs, SampleCache) {
        let act = self.cfg.activation;
        let mut acts = Vec::with_capacity(self.params.trunk.len());
        let mut x = features.to_vec();
        for l in &self.params.trunk {
            let mut y = Vec::with_capacity(l.n_out);
            l.forward(&x, &mut y);
            for v in &mut y {
                *v = act.apply(*v);
            }
            acts.push(y.clone());
            x = y;
        }
        let mut logits_x = Vec::new();
        let mut logits_y = Vec::new();
        let mut v = Vec::new();
        self.params.head_x.forward(&x, &mut logits_x);
        self.params.head_y.forward(&x, &mut logits_y);
        self.params.head_v.forward(&x, &mut v);
        (
            HeadOutputs {
                logits_x,
                logits_y,
                values: [v[0], v[1], v[2], v[3]],
            },
            SampleCache {
                input: features.to_vec(),
                acts,
            },
        )
    }

    pub fn heads(&self, features: &[f64]) -> Result<HeadOutputs> {
        self.check_input(features)?;
        Ok(self.run(features).0)
    }

    pub fn forward(&self, features: &[f64]) -> Result<(ActionDistributions, ValueEstimates)> {
        let h = self.heads(features)?;
        Ok((
            ActionDistributions::from_logits(&h.logits_x, &h.logits_y),
            ValueEstimates::from_array(h.values),
        ))
    }

    /// Exact gradient of the graph's single output with respect to every
    /// parameter.
    pub fn backward(&self, graph: &LossGraph) -> Result<Gradients> {
        if graph.outputs.len() != 1 {
            return Err(Error::NonScalarLoss(graph.outputs.len()));
        }
        let adj = graph.tape.backward(graph.outputs[0]);
        let mut grads = self.params.zeros_like();
        let act = self.cfg.activation;
        let p = &self.params;
        for (hv, cache) in graph.heads.iter().zip(&graph.caches) {
            let gx: Vec<f64> = hv.logits_x.iter().map(|v| adj[v.index()]).collect();
            let gy: Vec<f64> = hv.logits_y.iter().map(|v| adj[v.index()]).collect();
            let gv: Vec<f64> = hv.values.iter().map(|v| adj[v.index()]).collect();
            if gx.iter().chain(&gy).chain(&gv).all(|g| *g == 0.0) {
                continue;
            }
            let top = cache.acts.last().unwrap_or(&cache.input);
            let mut dh = vec![0.0; top.len()];
            p.head_x.backward(top, &gx, &mut grads.head_x, &mut dh);
            p.head_y.backward(top, &gy, &mut grads.head_y, &mut dh);
            p.head_v.backward(top, &gv, &mut grads.head_v, &mut dh);
            for k in (0..p.trunk.len()).rev() {
                let y = &cache.acts[k];
                let x = if k == 0 { &cache.input } else { &cache.acts[k - 1] };
                let dpre: Vec<f64> = dh.iter().zip(y).map(|(d, y)| d * act.grad_from_output(*y)).collect();
                let mut dx = vec![0.0; x.len()];
                p.trunk[k].backward(x, &dpre, &mut grads.trunk[k], &mut dx);
                dh = dx;
            }
        }
        Ok(grads)
    }
}

/// Tape handles for one sample's head outputs.
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub logits_x: Vec<Var>,
    pub logits_y: Vec<Var>,
    /// Ordered as [`VALUE_COMPONENTS`].
    pub values: [Var; 4],
}

/// A batch forward pass with its head outputs registered as tape leaves.
/// Losses are recorded on the tape and exactly one output is registered
/// before calling [`Policy::backward`].
pub struct LossGraph {
    pub tape: Tape,
    heads: Vec<HeadVars>,
    caches: Vec<SampleCache>,
    outputs: Vec<Var>,
}

impl LossGraph {
    pub fn build<F: AsRef<[f64]>>(policy: &Policy, features: &[F]) -> Result<Self> {
        let mut tape = Tape::new();
        let mut heads = Vec::with_capacity(features.len());
        let mut caches = Vec::with_capacity(features.len());
        for f in features {
            let f = f.as_ref();
            policy.check_input(f)?;
            let (h, cache) = policy.run(f);
            let logits_x = h.logits_x.iter().map(|v| tape.leaf(*v)).collect();
            let logits_y = h.logits_y.iter().map(|v| tape.leaf(*v)).collect();
            let values = h.values.map(|v| tape.leaf(v));
            heads.push(HeadVars {
                logits_x,
                logits_y,
                values,
            });
            caches.push(cache);
        }
        Ok(Self {
            tape,
            heads,
            caches,
            outputs: Vec::new(),
        })
    }

    pub fn heads(&self) -> &[HeadVars] {
        &self.heads
    }

    /// Simultaneous access to the tape and the head handles.
    pub fn parts(&mut self) -> (&mut Tape, &[HeadVars]) {
        (&mut self.tape, &self.heads)
    }

    pub fn add_output(&mut self, v: Var) {
        self.outputs.push(v);
    }

    pub fn outputs(&self) -> &[Var] {
        &self.outputs
    }

    pub fn loss_value(&self) -> Result<f64> {
        match self.outputs.as_slice() {
            [v] => Ok(self.tape.value(*v)),
            other => Err(Error::NonScalarLoss(other.len())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Stochastic,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub i: usize,
    pub j: usize,
    pub logp_x: f64,
    pub logp_y: f64,
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = k;
        }
    }
    best
}

pub fn sample_action(d: &ActionDistributions, rng: &mut impl Rng, mode: SampleMode) -> SampledAction {
    let (i, j) = match mode {
        SampleMode::Greedy => (argmax(&d.p_x), argmax(&d.p_y)),
        SampleMode::Stochastic => {
            let wx = WeightedIndex::new(&d.p_x).expect("softmax output is a valid distribution");
            let wy = WeightedIndex::new(&d.p_y).expect("softmax output is a valid distribution");
            let i = wx.sample(rng);
            (i, wy.sample(rng))
        }
    };
    SampledAction {
        i,
        j,
        logp_x: d.logp_x[i],
        logp_y: d.logp_y[j],
    }
}
