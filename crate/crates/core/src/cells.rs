//! sLSTM and mLSTM cells with exponential gating, plus lead-attention fusion.
//!
//! Both cells use exponential input and forget gates. In stabilized mode a
//! log-domain state `m_t = max(f̃_t + m_{t−1}, ĩ_t)` rescales the gates to
//! `i′ = exp(ĩ − m_t)` and `f′ = exp(f̃ + m_{t−1} − m_t)`. The scale cancels
//! in every output, so `m` is carried as plain values outside the graph.
//! The naive mode evaluates `exp(ĩ)` and `exp(f̃)` directly and exists to
//! check the stabilized recurrence against.
//!
//! Vectors are `1 × n` rows throughout; weights are stored `out × in`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stabilization {
    #[default]
    Stabilized,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    SLstm,
    MLstm,
}

/// sLSTM weights. `W_*` are `hidden × input`, `R_*` are `hidden × hidden`,
/// biases are `1 × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct SLstmParams<T> {
    pub w_i: T,
    pub w_f: T,
    pub w_z: T,
    pub w_o: T,
    pub r_i: T,
    pub r_f: T,
    pub r_z: T,
    pub r_o: T,
    pub b_i: T,
    pub b_f: T,
    pub b_z: T,
    pub b_o: T,
}

impl<T> SLstmParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SLstmParams<U> {
        SLstmParams {
            w_i: f(&self.w_i),
            w_f: f(&self.w_f),
            w_z: f(&self.w_z),
            w_o: f(&self.w_o),
            r_i: f(&self.r_i),
            r_f: f(&self.r_f),
            r_z: f(&self.r_z),
            r_o: f(&self.r_o),
            b_i: f(&self.b_i),
            b_f: f(&self.b_f),
            b_z: f(&self.b_z),
            b_o: f(&self.b_o),
        }
    }
}

impl SLstmParams<ParamId> {
    /// Registers freshly initialized weights under `prefix`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w = |name: &str, store: &mut ParamStore, rng: &mut R| {
            store.add_uniform(format!("{prefix}.{name}"), [hidden, input], input, rng)
        };
        let (w_i, w_f, w_z, w_o) = (w("w_i", store, rng), w("w_f", store, rng), w("w_z", store, rng), w("w_o", store, rng));
        let r = |name: &str, store: &mut ParamStore, rng: &mut R| {
            store.add_uniform(format!("{prefix}.{name}"), [hidden, hidden], hidden, rng)
        };
        let (r_i, r_f, r_z, r_o) = (r("r_i", store, rng), r("r_f", store, rng), r("r_z", store, rng), r("r_o", store, rng));
        let mut b = |name: &str| store.add_zeros(format!("{prefix}.{name}"), [1, hidden]);
        SLstmParams {
            w_i,
            w_f,
            w_z,
            w_o,
            r_i,
            r_f,
            r_z,
            r_o,
            b_i: b("b_i"),
            b_f: b("b_f"),
            b_z: b("b_z"),
            b_o: b("b_o"),
        }
    }

    pub fn resolve(&self, bound: &Bound) -> SLstmParams<Var> {
        self.map(|&id| bound.var(id))
    }
}

impl SLstmParams<Tensor> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros([hidden, input]);
        let r = || Tensor::zeros([hidden, hidden]);
        let b = || Tensor::zeros([1, hidden]);
        SLstmParams {
            w_i: w(),
            w_f: w(),
            w_z: w(),
            w_o: w(),
            r_i: r(),
            r_f: r(),
            r_z: r(),
            r_o: r(),
            b_i: b(),
            b_f: b(),
            b_z: b(),
            b_o: b(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> SLstmParams<Var> {
        self.map(|t| g.param(t))
    }
}

/// Initial mLSTM forget-gate bias. With `f = exp(f̃)` and a zero bias the
/// covariance memory grows geometrically with sequence length, so the readout
/// starts out huge. `exp(−4) ≈ 0.018` keeps it bounded at initialization.
pub const MLSTM_FORGET_BIAS_INIT: f64 = -4.0;

/// mLSTM weights: `W_q, W_k, W_v, W_o` are `d × input`; the scalar gates
/// `W_i, W_f` are `1 × input` with `1 × 1` biases; `b_o` is `1 × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MLstmParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_i: T,
    pub w_f: T,
    pub w_o: T,
    pub b_i: T,
    pub b_f: T,
    pub b_o: T,
}

impl<T> MLstmParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MLstmParams<U> {
        MLstmParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_i: f(&self.w_i),
            w_f: f(&self.w_f),
            w_o: f(&self.w_o),
            b_i: f(&self.b_i),
            b_f: f(&self.b_f),
            b_o: f(&self.b_o),
        }
    }
}

impl MLstmParams<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = |name: &str, rows: usize, store: &mut ParamStore, rng: &mut R| {
            store.add_uniform(format!("{prefix}.{name}"), [rows, input], input, rng)
        };
        let w_q = w("w_q", head_dim, store, rng);
        let w_k = w("w_k", head_dim, store, rng);
        let w_v = w("w_v", head_dim, store, rng);
        let w_i = w("w_i", 1, store, rng);
        let w_f = w("w_f", 1, store, rng);
        let w_o = w("w_o", head_dim, store, rng);
        MLstmParams {
            w_q,
            w_k,
            w_v,
            w_i,
            w_f,
            w_o,
            b_i: store.add_zeros(format!("{prefix}.b_i"), [1, 1]),
            b_f: store.add(format!("{prefix}.b_f"), Tensor::full([1, 1], MLSTM_FORGET_BIAS_INIT)),
            b_o: store.add_zeros(format!("{prefix}.b_o"), [1, head_dim]),
        }
    }

    pub fn resolve(&self, bound: &Bound) -> MLstmParams<Var> {
        self.map(|&id| bound.var(id))
    }
}

impl MLstmParams<Tensor> {
    pub fn zeros(input: usize, head_dim: usize) -> Self {
        MLstmParams {
            w_q: Tensor::zeros([head_dim, input]),
            w_k: Tensor::zeros([head_dim, input]),
            w_v: Tensor::zeros([head_dim, input]),
            w_i: Tensor::zeros([1, input]),
            w_f: Tensor::zeros([1, input]),
            w_o: Tensor::zeros([head_dim, input]),
            b_i: Tensor::zeros([1, 1]),
            b_f: Tensor::zeros([1, 1]),
            b_o: Tensor::zeros([1, head_dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> MLstmParams<Var> {
        self.map(|t| g.param(t))
    }
}

/// sLSTM carry. `m` is the stabilizer; `−∞` marks a fresh state.
#[derive(Debug, Clone)]
pub struct SLstmState {
    pub c: Var,
    pub n: Var,
    pub h: Var,
    pub m: Vec<f64>,
}

impl SLstmState {
    pub fn initial(g: &mut Graph, hidden: usize) -> Self {
        Self {
            c: g.constant(Tensor::zeros([1, hidden])),
            n: g.constant(Tensor::zeros([1, hidden])),
            h: g.constant(Tensor::zeros([1, hidden])),
            m: vec![f64::NEG_INFINITY; hidden],
        }
    }

    fn is_fresh(&self) -> bool {
        self.m.iter().all(|&m| m == f64::NEG_INFINITY)
    }
}

/// mLSTM carry: matrix memory `c` (`d × d`), normalizer `n` and output `h`
/// (`1 × d`), scalar stabilizer `m`. `denominator` is the clamped `qᵀn`
/// used for the last `h`, in the same scaled frame as `c` and `n`.
#[derive(Debug, Clone)]
pub struct MLstmState {
    pub c: Var,
    pub n: Var,
    pub h: Var,
    pub m: f64,
    pub denominator: f64,
}

impl MLstmState {
    pub fn initial(g: &mut Graph, head_dim: usize) -> Self {
        Self {
            c: g.constant(Tensor::zeros([head_dim, head_dim])),
            n: g.constant(Tensor::zeros([1, head_dim])),
            h: g.constant(Tensor::zeros([1, head_dim])),
            m: f64::NEG_INFINITY,
            denominator: 1.0,
        }
    }
}

fn gate_error(gate: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFinite {
            op: format!("{gate} preactivation"),
        },
        other => other,
    }
}

fn check_gate(g: &Graph, v: Var, gate: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            op: format!("{gate} preactivation"),
        })
    }
}

/// `seq · Wᵀ + b` for every row of `seq`.
fn project(g: &mut Graph, seq: Var, w: Var, b: Option<Var>, gate: &str) -> Result<Var> {
    let rows = g.shape(seq)[0];
    let wt = g.transpose(w)?;
    let mut out = g.matmul(seq, wt).map_err(gate_error(gate))?;
    if let Some(b) = b {
        let bb = g.expand_rows(b, rows)?;
        out = g.add(out, bb).map_err(gate_error(gate))?;
    }
    Ok(out)
}

struct SLstmInputs {
    i: Var,
    f: Var,
    z: Var,
    o: Var,
}

struct SLstmRecurrent {
    r_i: Var,
    r_f: Var,
    r_z: Var,
    r_o: Var,
}

fn slstm_inputs(g: &mut Graph, seq: Var, p: &SLstmParams<Var>) -> Result<SLstmInputs> {
    Ok(SLstmInputs {
        i: project(g, seq, p.w_i, Some(p.b_i), "sLSTM input gate")?,
        f: project(g, seq, p.w_f, Some(p.b_f), "sLSTM forget gate")?,
        z: project(g, seq, p.w_z, Some(p.b_z), "sLSTM cell input")?,
        o: project(g, seq, p.w_o, Some(p.b_o), "sLSTM output gate")?,
    })
}

fn slstm_recurrent(g: &mut Graph, p: &SLstmParams<Var>) -> Result<SLstmRecurrent> {
    Ok(SLstmRecurrent {
        r_i: g.transpose(p.r_i)?,
        r_f: g.transpose(p.r_f)?,
        r_z: g.transpose(p.r_z)?,
        r_o: g.transpose(p.r_o)?,
    })
}

fn slstm_advance(
    g: &mut Graph,
    inputs: &SLstmInputs,
    rec: &SLstmRecurrent,
    t: usize,
    prev: &SLstmState,
    mode: Stabilization,
) -> Result<SLstmState> {
    let preact = |g: &mut Graph, xs: Var, r: Var, gate: &str| -> Result<Var> {
        let x = g.row(xs, t)?;
        let rh = g.matmul(prev.h, r).map_err(gate_error(gate))?;
        let v = g.add(x, rh).map_err(gate_error(gate))?;
        check_gate(g, v, gate)?;
        Ok(v)
    };
    let it = preact(g, inputs.i, rec.r_i, "sLSTM input gate")?;
    let ft = preact(g, inputs.f, rec.r_f, "sLSTM forget gate")?;
    let zt = preact(g, inputs.z, rec.r_z, "sLSTM cell input")?;
    let ot = preact(g, inputs.o, rec.r_o, "sLSTM output gate")?;

    let hidden = g.shape(it)[1];
    let (i_gate, f_gate, m) = match mode {
        Stabilization::Stabilized => {
            let iv = g.value(it).data().to_vec();
            let fv = g.value(ft).data();
            let fresh = prev.is_fresh();
            let m: Vec<f64> = (0..hidden)
                .map(|j| if fresh { iv[j] } else { (fv[j] + prev.m[j]).max(iv[j]) })
                .collect();
            let neg_m = g.constant(Tensor::row(&m.iter().map(|v| -v).collect::<Vec<_>>()));
            let shifted = g.add(it, neg_m)?;
            let i_gate = g.exp(shifted)?;
            let f_gate = if fresh {
                None
            } else {
                let offs: Vec<f64> = (0..hidden).map(|j| prev.m[j] - m[j]).collect();
                let offs = g.constant(Tensor::row(&offs));
                let shifted = g.add(ft, offs)?;
                Some(g.exp(shifted)?)
            };
            (i_gate, f_gate, m)
        }
        Stabilization::Naive => {
            let i_gate = g.exp(it).map_err(gate_error("sLSTM input gate"))?;
            let f_gate = g.exp(ft).map_err(gate_error("sLSTM forget gate"))?;
            (i_gate, Some(f_gate), vec![0.0; hidden])
        }
    };
    let z = g.tanh(zt)?;
    let o = g.sigmoid(ot)?;
    let iz = g.mul(i_gate, z)?;
    let (c, n) = match f_gate {
        Some(f) => {
            let fc = g.mul(f, prev.c)?;
            let fnn = g.mul(f, prev.n)?;
            (g.add(fc, iz)?, g.add(fnn, i_gate)?)
        }
        None => (iz, i_gate),
    };
    let ratio = g.div(c, n)?;
    let h = g.mul(o, ratio)?;
    Ok(SLstmState { c, n, h, m })
}

/// One sLSTM step for a `1 × input` row `x`.
pub fn slstm_step(
    g: &mut Graph,
    x: Var,
    prev: &SLstmState,
    p: &SLstmParams<Var>,
    mode: Stabilization,
) -> Result<SLstmState> {
    let inputs = slstm_inputs(g, x, p)?;
    let rec = slstm_recurrent(g, p)?;
    slstm_advance(g, &inputs, &rec, 0, prev, mode)
}

struct MLstmInputs {
    q: Var,
    k: Var,
    v: Var,
    i: Var,
    f: Var,
    o: Var,
}

fn mlstm_inputs(g: &mut Graph, seq: Var, p: &MLstmParams<Var>) -> Result<MLstmInputs> {
    let d = g.shape(p.w_k)[0];
    let q = project(g, seq, p.w_q, None, "mLSTM query")?;
    let k_raw = project(g, seq, p.w_k, None, "mLSTM key")?;
    let k = g.scale(k_raw, 1.0 / math::sqrt(d as f64))?;
    let v = project(g, seq, p.w_v, None, "mLSTM value")?;
    let i = project(g, seq, p.w_i, Some(p.b_i), "mLSTM input gate")?;
    let f = project(g, seq, p.w_f, Some(p.b_f), "mLSTM forget gate")?;
    let o_pre = project(g, seq, p.w_o, Some(p.b_o), "mLSTM output gate")?;
    let o = g.sigmoid(o_pre)?;
    Ok(MLstmInputs { q, k, v, i, f, o })
}

fn mlstm_advance(
    g: &mut Graph,
    inputs: &MLstmInputs,
    t: usize,
    prev: &MLstmState,
    mode: Stabilization,
) -> Result<MLstmState> {
    let q = g.row(inputs.q, t)?;
    let k = g.row(inputs.k, t)?;
    let v = g.row(inputs.v, t)?;
    let it = g.row(inputs.i, t)?;
    let ft = g.row(inputs.f, t)?;
    let o = g.row(inputs.o, t)?;
    check_gate(g, it, "mLSTM input gate")?;
    check_gate(g, ft, "mLSTM forget gate")?;

    let fresh = prev.m == f64::NEG_INFINITY;
    let (i_gate, f_gate, m, floor) = match mode {
        Stabilization::Stabilized => {
            let iv = g.value(it).item();
            let fv = g.value(ft).item();
            let m = if fresh { iv } else { (fv + prev.m).max(iv) };
            let shifted = g.add_scalar(it, -m)?;
            let i_gate = g.exp(shifted)?;
            let f_gate = if fresh {
                None
            } else {
                let shifted = g.add_scalar(ft, prev.m - m)?;
                Some(g.exp(shifted)?)
            };
            // max(qᵀn, 1) expressed in the frame scaled by exp(−m)
            (i_gate, f_gate, m, math::exp(-m).max(f64::MIN_POSITIVE))
        }
        Stabilization::Naive => {
            let i_gate = g.exp(it).map_err(gate_error("mLSTM input gate"))?;
            let f_gate = g.exp(ft).map_err(gate_error("mLSTM forget gate"))?;
            (i_gate, Some(f_gate), 0.0, 1.0)
        }
    };

    let vt = g.transpose(v)?;
    let outer = g.matmul(vt, k)?;
    let i_outer = g.mul(i_gate, outer)?;
    let ik = g.mul(i_gate, k)?;
    let (c, n) = match f_gate {
        Some(f) => {
            let fc = g.mul(f, prev.c)?;
            let fnn = g.mul(f, prev.n)?;
            (g.add(fc, i_outer)?, g.add(fnn, ik)?)
        }
        None => (i_outer, ik),
    };
    let qn_terms = g.mul(q, n)?;
    let qn = g.sum(qn_terms)?;
    let denom = g.max_scalar(qn, floor)?;
    let ct = g.transpose(c)?;
    let cq = g.matmul(q, ct)?;
    let read = g.div(cq, denom)?;
    let h = g.mul(o, read)?;
    let denominator = g.value(denom).item();
    Ok(MLstmState {
        c,
        n,
        h,
        m,
        denominator,
    })
}

/// One mLSTM step for a `1 × input` row `x`.
pub fn mlstm_step(
    g: &mut Graph,
    x: Var,
    prev: &MLstmState,
    p: &MLstmParams<Var>,
    mode: Stabilization,
) -> Result<MLstmState> {
    let inputs = mlstm_inputs(g, x, p)?;
    mlstm_advance(g, &inputs, 0, prev, mode)
}

/// Bound parameters of either cell type.
#[derive(Debug, Clone, Copy)]
pub enum CellParams<'a> {
    SLstm(&'a SLstmParams<Var>),
    MLstm(&'a MLstmParams<Var>),
}

impl CellParams<'_> {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::SLstm(_) => CellKind::SLstm,
            CellParams::MLstm(_) => CellKind::MLstm,
        }
    }
}

/// Runs a cell over a `T × input` sequence from the zero state and returns
/// the `T × hidden` stack of hidden states.
pub fn sequence_forward(g: &mut Graph, seq: Var, cell: CellParams<'_>, mode: Stabilization) -> Result<Var> {
    let steps = g.shape(seq)[0];
    if steps == 0 || g.value(seq).rank() != 2 {
        return Err(Error::InvalidShape {
            shape: g.shape(seq).to_vec(),
            reason: "sequence must be T × features with T ≥ 1",
        });
    }
    let mut outputs = Vec::with_capacity(steps);
    match cell {
        CellParams::SLstm(p) => {
            let hidden = g.shape(p.w_i)[0];
            let inputs = slstm_inputs(g, seq, p)?;
            let rec = slstm_recurrent(g, p)?;
            let mut state = SLstmState::initial(g, hidden);
            for t in 0..steps {
                state = slstm_advance(g, &inputs, &rec, t, &state, mode)?;
                outputs.push(state.h);
            }
        }
        CellParams::MLstm(p) => {
            let d = g.shape(p.w_q)[0];
            let inputs = mlstm_inputs(g, seq, p)?;
            let mut state = MLstmState::initial(g, d);
            for t in 0..steps {
                state = mlstm_advance(g, &inputs, t, &state, mode)?;
                outputs.push(state.h);
            }
        }
    }
    g.concat(&outputs)
}

/// Learnable parameters of the lead-attention fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadAttentionParams<T> {
    /// `1 × 1` mixing weight.
    pub alpha: T,
    /// `1 × hidden` scoring vector.
    pub score: T,
}

impl LeadAttentionParams<ParamId> {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, hidden: usize, rng: &mut R) -> Self {
        Self {
            alpha: store.add_zeros(format!("{prefix}.alpha"), [1, 1]),
            score: store.add_uniform(format!("{prefix}.score"), [1, hidden], hidden, rng),
        }
    }

    pub fn resolve(&self, bound: &Bound) -> LeadAttentionParams<Var> {
        LeadAttentionParams {
            alpha: bound.var(self.alpha),
            score: bound.var(self.score),
        }
    }
}

/// `mean_l h⁽ˡ⁾ + α · Σ_l softmax_l(score · h⁽ˡ⁾) h⁽ˡ⁾` over per-lead rows.
pub fn lead_attention_fuse(g: &mut Graph, hiddens: &[Var], alpha: Var, score: Var) -> Result<Var> {
    let first = *hiddens.first().ok_or(Error::Empty)?;
    let shape = g.shape(first).to_vec();
    if hiddens.iter().any(|&h| g.shape(h) != shape.as_slice()) || g.shape(score) != shape.as_slice() {
        return Err(Error::shape("lead_attention_fuse", &shape, g.shape(score)));
    }
    let mut total = first;
    for &h in &hiddens[1..] {
        total = g.add(total, h)?;
    }
    let mean = g.scale(total, 1.0 / hiddens.len() as f64)?;

    let mut scores = Vec::with_capacity(hiddens.len());
    for &h in hiddens {
        let prod = g.mul(h, score)?;
        scores.push(g.sum(prod)?);
    }
    let scores = g.concat(&scores)?;
    let max = g.value(scores).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = g.add_scalar(scores, -max)?;
    let e = g.exp(shifted)?;
    let z = g.sum(e)?;
    let weights = g.div(e, z)?;

    let mut attention = None;
    for (l, &h) in hiddens.iter().enumerate() {
        let w = g.element(weights, l)?;
        let term = g.mul(w, h)?;
        attention = Some(match attention {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let attention = attention.expect("at least one lead");
    let scaled = g.mul(alpha, attention)?;
    g.add(mean, scaled)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn set(t: &mut Tensor, v: f64) {
        t.data_mut().iter_mut().for_each(|x| *x = v);
    }

    #[test]
    fn zero_weight_slstm_fixed_point() {
        let mut g = Graph::new();
        let p = SLstmParams::zeros(3, 2).bind(&mut g);
        let x = g.constant(Tensor::row(&[0.7, -1.0, 2.0]));
        let s0 = SLstmState::initial(&mut g, 2);
        let s1 = slstm_step(&mut g, x, &s0, &p, Stabilization::Stabilized).unwrap();
        assert_eq!(g.value(s1.c).data(), &[0.0, 0.0]);
        assert_eq!(g.value(s1.n).data(), &[1.0, 1.0]);
        assert_eq!(g.value(s1.h).data(), &[0.0, 0.0]);
        assert_eq!(s1.m, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_slstm_worked_example() {
        // x = 1 with weights chosen so the preactivations are
        // ĩ = 0.1, f̃ = −0.2, z = 0.5, o = 0.
        let mut w = SLstmParams::zeros(1, 1);
        set(&mut w.w_i, 0.1);
        set(&mut w.w_f, -0.2);
        set(&mut w.w_z, 0.5);
        let mut g = Graph::new();
        let p = w.bind(&mut g);
        let x = g.constant(Tensor::row(&[1.0]));
        let prev = SLstmState {
            c: g.constant(Tensor::row(&[0.3])),
            n: g.constant(Tensor::row(&[1.0])),
            h: g.constant(Tensor::row(&[0.0])),
            m: vec![0.0],
        };
        let s = slstm_step(&mut g, x, &prev, &p, Stabilization::Naive).unwrap();
        assert!((g.value(s.c).item() - 0.75634).abs() < 5e-6);
        assert!((g.value(s.n).item() - 1.92390).abs() < 5e-6);
        // exact: 0.5 · c / n with c, n from the scalar recurrence
        let (i, f, z) = (0.1f64.exp(), (-0.2f64).exp(), 0.5f64.tanh());
        let exact = 0.5 * (f * 0.3 + i * z) / (f + i);
        assert!((g.value(s.h).item() - exact).abs() < 1e-12);
        assert!((g.value(s.h).item() - 0.19657).abs() < 1e-5);

        // stabilized from the same carry gives the same h
        let s = slstm_step(&mut g, x, &prev, &p, Stabilization::Stabilized).unwrap();
        assert!((g.value(s.h).item() - exact).abs() < 1e-12);
    }

    #[test]
    fn null_projection_mlstm_outputs_zero() {
        let mut w = MLstmParams::zeros(2, 3);
        set(&mut w.b_i, 2.0);
        set(&mut w.b_f, -1.0);
        let mut g = Graph::new();
        let p = w.bind(&mut g);
        let x = g.constant(Tensor::row(&[1.0, -2.0]));
        for mode in [Stabilization::Naive, Stabilization::Stabilized] {
            let s0 = MLstmState::initial(&mut g, 3);
            let s1 = mlstm_step(&mut g, x, &s0, &p, mode).unwrap();
            assert_eq!(g.value(s1.h).data(), &[0.0; 3]);
        }
    }

    #[test]
    fn scalar_mlstm_worked_example() {
        let mut w = MLstmParams::zeros(1, 1);
        set(&mut w.w_q, 1.0);
        set(&mut w.w_k, 1.0);
        set(&mut w.w_v, 1.0);
        set(&mut w.w_i, 0.1);
        set(&mut w.w_f, -0.2);
        let mut g = Graph::new();
        let p = w.bind(&mut g);
        let x = g.constant(Tensor::row(&[1.0]));
        let prev = MLstmState {
            c: g.constant(Tensor::from_rows(&[&[0.2]]).unwrap()),
            n: g.constant(Tensor::row(&[0.5])),
            h: g.constant(Tensor::row(&[0.0])),
            m: 0.0,
            denominator: 1.0,
        };
        let s = mlstm_step(&mut g, x, &prev, &p, Stabilization::Naive).unwrap();
        assert!((g.value(s.c).item() - 1.26892).abs() < 5e-6);
        assert!((g.value(s.n).item() - 1.51454).abs() < 5e-6);
        assert!(s.denominator > 1.0);
        assert!((g.value(s.h).item() - 0.41891).abs() < 5e-6);
    }

    #[test]
    fn mlstm_denominator_clamps_to_one() {
        // q = k = 1, v = 1 from zero state with ĩ = ln 0.3: n = 0.3, qᵀn = 0.3
        let mut w = MLstmParams::zeros(1, 1);
        set(&mut w.w_q, 1.0);
        set(&mut w.w_k, 1.0);
        set(&mut w.w_v, 1.0);
        set(&mut w.b_i, libm::log(0.3));
        let mut g = Graph::new();
        let p = w.bind(&mut g);
        let x = g.constant(Tensor::row(&[1.0]));
        let s0 = MLstmState::initial(&mut g, 1);
        let s1 = mlstm_step(&mut g, x, &s0, &p, Stabilization::Naive).unwrap();
        assert!((g.value(s1.n).item() - 0.3).abs() < 1e-12);
        assert_eq!(s1.denominator, 1.0);
        // h = σ(0)·C·q/1 = 0.5·0.3
        assert!((g.value(s1.h).item() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn non_finite_preactivation_names_gate() {
        let mut w = SLstmParams::zeros(1, 1);
        set(&mut w.w_f, 1.0);
        let mut g = Graph::new();
        let p = w.bind(&mut g);
        let x = g.constant(Tensor::row(&[f64::MAX]));
        let mut w2 = w.clone();
        set(&mut w2.w_f, 10.0);
        let p2 = w2.bind(&mut g);
        let s0 = SLstmState::initial(&mut g, 1);
        assert!(slstm_step(&mut g, x, &s0, &p, Stabilization::Stabilized).is_ok());
        match slstm_step(&mut g, x, &s0, &p2, Stabilization::Stabilized) {
            Err(Error::NonFinite { op }) => assert!(op.contains("forget gate"), "{op}"),
            other => panic!("expected gate error, got {other:?}"),
        }
    }

    #[test]
    fn single_step_sequence_equals_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let sp = SLstmParams::init(&mut store, "s", 3, 4, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let p = sp.resolve(&bound);
        let x = g.constant(Tensor::row(&[0.3, -0.2, 0.9]));
        let seq = sequence_forward(&mut g, x, CellParams::SLstm(&p), Stabilization::Stabilized).unwrap();
        let s0 = SLstmState::initial(&mut g, 4);
        let s1 = slstm_step(&mut g, x, &s0, &p, Stabilization::Stabilized).unwrap();
        assert_eq!(g.value(seq).data(), g.value(s1.h).data());
    }

    #[test]
    fn alpha_zero_is_lead_mean() {
        let mut g = Graph::new();
        let hs: Vec<Var> = (0..12)
            .map(|l| g.constant(Tensor::row(&[l as f64, 1.0 - l as f64 * 0.5])))
            .collect();
        let alpha = g.constant(Tensor::from_rows(&[&[0.0]]).unwrap());
        let score = g.constant(Tensor::row(&[0.3, -0.1]));
        let out = lead_attention_fuse(&mut g, &hs, alpha, score).unwrap();
        let v = g.value(out).data();
        assert!((v[0] - 5.5).abs() < 1e-12);
        assert!((v[1] - (1.0 - 2.75)).abs() < 1e-12);
    }

    #[test]
    fn identical_leads_give_one_plus_alpha() {
        let mut g = Graph::new();
        let v = [0.4, -1.2, 2.0];
        let hs: Vec<Var> = (0..12).map(|_| g.constant(Tensor::row(&v))).collect();
        let alpha = g.constant(Tensor::from_rows(&[&[0.7]]).unwrap());
        let score = g.constant(Tensor::row(&[1.0, 2.0, -0.5]));
        let out = lead_attention_fuse(&mut g, &hs, alpha, score).unwrap();
        for (o, x) in g.value(out).data().iter().zip(v) {
            assert!((o - 1.7 * x).abs() < 1e-12);
        }
    }
}
