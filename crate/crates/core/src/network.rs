//! Paired sLSTM/mLSTM stacks with sequential or layer-wise fusion, input
//! projection, dropout, temporal pooling and per-class sigmoid heads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};

use crate::autodiff::{Graph, Var};
use crate::cells::{
    lead_attention_fuse, sequence_forward, CellParams, LeadAttentionParams, MLstmParams, SLstmParams, Stabilization,
};
use crate::dsp::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::math;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    SLstmOnly,
    MLstmOnly,
    Sequential,
    #[default]
    Layer,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::SLstmOnly,
        FusionMode::MLstmOnly,
        FusionMode::Sequential,
        FusionMode::Layer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::SLstmOnly => "slstm",
            FusionMode::MLstmOnly => "mlstm",
            FusionMode::Sequential => "sequential",
            FusionMode::Layer => "layer",
        }
    }

    fn uses_slstm(self) -> bool {
        self != FusionMode::MLstmOnly
    }

    fn uses_mlstm(self) -> bool {
        self != FusionMode::SLstmOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slstm" | "slstm-only" => Ok(FusionMode::SLstmOnly),
            "mlstm" | "mlstm-only" => Ok(FusionMode::MLstmOnly),
            "sequential" => Ok(FusionMode::Sequential),
            "layer" => Ok(FusionMode::Layer),
            other => Err(Error::config(format!(
                "unknown fusion mode '{other}' (expected slstm, mlstm, sequential or layer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    /// Layers per block.
    pub n_layers: usize,
    pub n_blocks: usize,
    pub fusion_mode: FusionMode,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub use_lead_attention: bool,
    pub n_leads: usize,
    /// Retained frequency bins per lead.
    pub n_bins: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            n_layers: 4,
            n_blocks: 2,
            fusion_mode: FusionMode::Layer,
            dropout_p: 0.5,
            n_classes: 5,
            use_lead_attention: false,
            n_leads: 12,
            n_bins: 190,
        }
    }
}

impl NetworkConfig {
    /// Width of each row entering the input projection.
    pub fn input_dim(&self) -> usize {
        if self.use_lead_attention {
            self.hidden_dim
        } else {
            self.n_leads * self.n_bins
        }
    }

    pub fn total_layers(&self) -> usize {
        self.n_layers * self.n_blocks
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_blocks", self.n_blocks),
            ("n_classes", self.n_classes),
            ("n_leads", self.n_leads),
            ("n_bins", self.n_bins),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

/// Whether a forward pass is for training (dropout active) or evaluation.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Pass<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Pass::Train(_))
    }
}

/// Inverted dropout: zero each element with probability `p` and scale the
/// survivors by `1/(1−p)`. Identity when not training or when `p = 0`.
pub fn dropout<R: Rng + ?Sized>(t: &Tensor, p: f64, training: bool, rng: &mut R) -> Tensor {
    if !training || p == 0.0 {
        return t.clone();
    }
    let keep = 1.0 / (1.0 - p);
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = if rng.random::<f64>() < p { 0.0 } else { *v * keep };
    }
    out
}

/// Graph version of [`dropout`]: multiplies by a constant random mask.
pub fn dropout_var(g: &mut Graph, v: Var, p: f64, pass: &mut Pass<'_>) -> Result<Var> {
    match pass {
        Pass::Train(rng) if p > 0.0 => {
            let ones = Tensor::full(g.shape(v).to_vec(), 1.0);
            let mask = dropout(&ones, p, true, &mut **rng);
            let mask = g.constant(mask);
            g.mul(v, mask)
        }
        _ => Ok(v),
    }
}

/// Elementwise mean of two equally shaped sequences.
pub fn fuse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("fuse", g.shape(a), g.shape(b)));
    }
    let sum = g.add(a, b)?;
    g.scale(sum, 0.5)
}

/// Averages a `T × hidden` sequence over time and applies `C` independent
/// sigmoid heads; `head_w` is `C × hidden`, `head_b` is `1 × C`.
pub fn classify_head(g: &mut Graph, fused: Var, head_w: Var, head_b: Var) -> Result<Var> {
    let hidden = g.shape(fused)[1];
    let pooled = g.mean(fused, 0)?;
    let v = g.reshape(pooled, &[1, hidden])?;
    let wt = g.transpose(head_w)?;
    let logits = g.matmul(v, wt)?;
    let logits = g.add(logits, head_b)?;
    g.sigmoid(logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub slstm: Option<SLstmParams<ParamId>>,
    pub mlstm: Option<MLstmParams<ParamId>>,
}

#[derive(Debug, Clone, PartialEq)]
struct LeadEncoder {
    cell: SLstmParams<ParamId>,
    attention: LeadAttentionParams<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetwork {
    config: NetworkConfig,
    params: ParamStore,
    proj_w: ParamId,
    proj_b: ParamId,
    /// `n_blocks × n_layers` layers, block-major.
    layers: Vec<LayerParams>,
    head_w: ParamId,
    head_b: ParamId,
    lead: Option<LeadEncoder>,
}

impl FusionNetwork {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let mut params = ParamStore::new();
        let lead = if config.use_lead_attention {
            Some(LeadEncoder {
                cell: SLstmParams::init(&mut params, "lead.slstm", config.n_bins, h, rng),
                attention: LeadAttentionParams::init(&mut params, "lead.attention", h, rng),
            })
        } else {
            None
        };
        let input = config.input_dim();
        // Stored unscaled; the forward pass divides by √input (see `project`).
        let proj_w = params.add_uniform("proj.w", [h, input], 1, rng);
        let proj_b = params.add_zeros("proj.b", [1, h]);
        let mut layers = Vec::with_capacity(config.total_layers());
        for b in 0..config.n_blocks {
            for l in 0..config.n_layers {
                let slstm = config
                    .fusion_mode
                    .uses_slstm()
                    .then(|| SLstmParams::init(&mut params, &format!("block{b}.layer{l}.slstm"), h, h, rng));
                let mlstm = config
                    .fusion_mode
                    .uses_mlstm()
                    .then(|| MLstmParams::init(&mut params, &format!("block{b}.layer{l}.mlstm"), h, h, rng));
                layers.push(LayerParams { slstm, mlstm });
            }
        }
        let head_w = params.add_uniform("head.w", [config.n_classes, h], h, rng);
        let head_b = params.add_zeros("head.b", [1, config.n_classes]);
        Ok(Self {
            config,
            params,
            proj_w,
            proj_b,
            layers,
            head_w,
            head_b,
            lead,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Switches to another fusion mode with the same parameter layout, so
    /// sequential and layer fusion can be compared on identical weights.
    pub fn set_fusion_mode(&mut self, mode: FusionMode) -> Result<()> {
        let current = self.config.fusion_mode;
        if mode.uses_slstm() != current.uses_slstm() || mode.uses_mlstm() != current.uses_mlstm() {
            return Err(Error::config(format!("cannot switch from {current} to {mode}: parameter layouts differ")));
        }
        self.config.fusion_mode = mode;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    fn check_layout(&self, spec: &Spectrogram) -> Result<()> {
        if spec.leads() != self.config.n_leads || spec.bins() != self.config.n_bins {
            return Err(Error::shape(
                "network input",
                &[self.config.n_leads, self.config.n_bins],
                &[spec.leads(), spec.bins()],
            ));
        }
        Ok(())
    }

    /// Builds the `T′ × input_dim` sequence fed to the input projection
/// `x ↦ W x / √input_dim + b`.
    fn input_sequence(&self, g: &mut Graph, bound: &Bound, spec: &Spectrogram) -> Result<Var> {
        self.check_layout(spec)?;
        let Some(lead) = &self.lead else {
            return Ok(g.constant(spec.feature_tensor()));
        };
        let cell = lead.cell.resolve(bound);
        let attn = lead.attention.resolve(bound);
        let mut per_lead = Vec::with_capacity(spec.leads());
        for l in 0..spec.leads() {
            let x = g.constant(spec.lead_tensor(l));
            per_lead.push(sequence_forward(g, x, CellParams::SLstm(&cell), Stabilization::Stabilized)?);
        }
        let mut frames = Vec::with_capacity(spec.frames());
        let mut rows = Vec::with_capacity(per_lead.len());
        for t in 0..spec.frames() {
            rows.clear();
            for &h in &per_lead {
                rows.push(g.row(h, t)?);
            }
            frames.push(lead_attention_fuse(g, &rows, attn.alpha, attn.score)?);
        }
        g.concat(&frames)
    }

    fn project(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let input = self.config.input_dim();
        if g.shape(x).len() != 2 || g.shape(x)[1] != input {
            return Err(Error::shape("input projection", &[0, input], g.shape(x)));
        }
        let rows = g.shape(x)[0];
        let wt = g.transpose(bound.var(self.proj_w))?;
        let y = g.matmul(x, wt)?;
        // Fan-in scaling in the forward pass rather than at initialization
        // keeps Adam's per-step change of the projection independent of the
        // (large) flattened input width.
        let y = g.scale(y, 1.0 / math::sqrt(input as f64))?;
        let b = g.expand_rows(bound.var(self.proj_b), rows)?;
        g.add(y, b)
    }

    fn run_cell(&self, g: &mut Graph, bound: &Bound, layer: &LayerParams, slstm: bool, x: Var) -> Result<Var> {
        if slstm {
            let p = layer.slstm.as_ref().expect("sLSTM present for this mode").resolve(bound);
            sequence_forward(g, x, CellParams::SLstm(&p), Stabilization::Stabilized)
        } else {
            let p = layer.mlstm.as_ref().expect("mLSTM present for this mode").resolve(bound);
            sequence_forward(g, x, CellParams::MLstm(&p), Stabilization::Stabilized)
        }
    }

    /// The block stack applied to a projected `T′ × hidden` sequence.
    pub fn stack(&self, g: &mut Graph, bound: &Bound, mut x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let p = self.config.dropout_p;
        let total = self.layers.len();
        match self.config.fusion_mode {
            mode @ (FusionMode::SLstmOnly | FusionMode::MLstmOnly) => {
                for (i, layer) in self.layers.iter().enumerate() {
                    x = self.run_cell(g, bound, layer, mode == FusionMode::SLstmOnly, x)?;
                    if i + 1 < total {
                        x = dropout_var(g, x, p, pass)?;
                    }
                }
            }
            FusionMode::Layer => {
                for (i, layer) in self.layers.iter().enumerate() {
                    let s = self.run_cell(g, bound, layer, true, x)?;
                    let m = self.run_cell(g, bound, layer, false, x)?;
                    x = fuse(g, s, m)?;
                    if i + 1 < total {
                        x = dropout_var(g, x, p, pass)?;
                    }
                }
            }
            FusionMode::Sequential => {
                let n = self.config.n_layers;
                for (b, block) in self.layers.chunks(n).enumerate() {
                    let (mut s, mut m) = (x, x);
                    for (l, layer) in block.iter().enumerate() {
                        s = self.run_cell(g, bound, layer, true, s)?;
                        m = self.run_cell(g, bound, layer, false, m)?;
                        if l + 1 < n {
                            s = dropout_var(g, s, p, pass)?;
                            m = dropout_var(g, m, p, pass)?;
                        }
                    }
                    x = fuse(g, s, m)?;
                    if b + 1 < self.config.n_blocks {
                        x = dropout_var(g, x, p, pass)?;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Per-class probabilities as a `1 × C` graph node.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, spec: &Spectrogram, pass: &mut Pass<'_>) -> Result<Var> {
        let x = self.input_sequence(g, bound, spec)?;
        self.forward_sequence(g, bound, x, pass)
    }

    /// Forward from an already assembled `T′ × input_dim` sequence.
    pub fn forward_sequence(&self, g: &mut Graph, bound: &Bound, x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let x = self.project(g, bound, x)?;
        let fused = self.stack(g, bound, x, pass)?;
        classify_head(g, fused, bound.var(self.head_w), bound.var(self.head_b))
    }

    /// Evaluation-mode probabilities.
    pub fn predict(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let p = self.forward(&mut g, &bound, spec, &mut Pass::Eval)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Replaces every parameter by name, checking shapes.
    pub fn load_params<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        self.params.load(entries)
    }

    /// Parameter names in registration order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| String::from(n)).collect()
    }
}
