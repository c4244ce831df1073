use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlstm_ecg_core::cells::{
    mlstm_step, sequence_forward, slstm_step, CellParams, MLstmParams, MLstmState, SLstmParams, SLstmState,
    Stabilization,
};
use xlstm_ecg_core::gradcheck;
use xlstm_ecg_core::params::ParamStore;
use xlstm_ecg_core::{Error, Graph, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new([rows, cols], data).unwrap()
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn stabilized_matches_naive_over_twenty_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..20 {
        let (input, hidden) = (3, 4);
        let mut store = ParamStore::new();
        let sp = SLstmParams::init(&mut store, "s", input, hidden, &mut rng);
        let mp = MLstmParams::init(&mut store, "m", input, hidden, &mut rng);
        randomize(&mut store, &mut rng, 0.5);
        let seq = random_tensor(&mut rng, 20, input, 1.0);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(seq);
        let (s, m) = (sp.resolve(&bound), mp.resolve(&bound));
        for cell in [CellParams::SLstm(&s), CellParams::MLstm(&m)] {
            let a = sequence_forward(&mut g, x, cell, Stabilization::Stabilized).unwrap();
            let b = sequence_forward(&mut g, x, cell, Stabilization::Naive).unwrap();
            for (u, v) in g.value(a).data().iter().zip(g.value(b).data()) {
                assert!((u - v).abs() < 1e-10, "trial {trial} {:?}: {u} vs {v}", cell.kind());
            }
        }
    }
}

/// Scalar sLSTM with ĩ = ±60, f̃ = ±60 (mostly positive), z = tanh(x), o = 0 and no
/// recurrence. The output is σ(0) times a weighted mean of the z values
/// with log-weights ĩ_s + Σ_{r>s} f̃_r, computed here in closed form.
#[test]
fn extreme_preactivations_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let steps = 50;
    let xs: Vec<[f64; 2]> = (0..steps)
        .map(|_| [if rng.random_bool(0.5) { 1.0 } else { -1.0 }, if rng.random_bool(0.8) { 1.0 } else { -1.0 }])
        .collect();
    let mut w = SLstmParams::zeros(2, 1);
    w.w_i.data_mut().copy_from_slice(&[60.0, 0.0]);
    w.w_f.data_mut().copy_from_slice(&[0.0, 60.0]);
    w.w_z.data_mut().copy_from_slice(&[1.0, 0.0]);

    let mut g = Graph::new();
    let p = w.bind(&mut g);
    let mut state = SLstmState::initial(&mut g, 1);
    let mut naive = SLstmState::initial(&mut g, 1);
    let mut naive_failed = false;
    for (t, x) in xs.iter().enumerate() {
        let xv = g.constant(Tensor::row(x));
        state = slstm_step(&mut g, xv, &state, &p, Stabilization::Stabilized).unwrap();
        if !naive_failed {
            match slstm_step(&mut g, xv, &naive, &p, Stabilization::Naive) {
                Ok(s) => naive = s,
                Err(Error::NonFinite { .. }) => naive_failed = true,
                Err(e) => panic!("unexpected {e}"),
            }
        }

        let log_w: Vec<f64> = (0..=t)
            .map(|s| 60.0 * xs[s][0] + xs[s + 1..=t].iter().map(|x| 60.0 * x[1]).sum::<f64>())
            .collect();
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let expect = sigmoid(0.0) * (0..=t).map(|s| weights[s] * xs[s][0].tanh()).sum::<f64>() / total;
        let h = g.value(state.h).item();
        assert!(h.is_finite());
        assert!((h - expect).abs() < 1e-12, "step {t}: {h} vs {expect}");
    }
    assert!(naive_failed, "naive recurrence should overflow");
}

#[test]
fn extreme_mlstm_preactivations_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (steps, d) = (50, 2);
    let mut w = MLstmParams::zeros(3, d);
    w.w_i.data_mut().copy_from_slice(&[60.0, 0.0, 0.0]);
    w.w_f.data_mut().copy_from_slice(&[0.0, 60.0, 0.0]);
    for t in [&mut w.w_k, &mut w.w_v] {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    // q parallel to k keeps every qᵀk non-negative, so the clamped
    // denominator has a finite limit.
    w.w_q = w.w_k.clone();
    let xs: Vec<Tensor> = (0..steps)
        .map(|_| {
            let s = |r: &mut ChaCha8Rng, p: f64| if r.random_bool(p) { 1.0 } else { -1.0 };
            Tensor::row(&[s(&mut rng, 0.5), s(&mut rng, 0.8), rng.random_range(0.5..1.0)])
        })
        .collect();
    let mut g = Graph::new();
    let p = w.bind(&mut g);
    let mut state = MLstmState::initial(&mut g, d);
    let mut naive = MLstmState::initial(&mut g, d);
    let mut naive_failed = false;
    for (t, x) in xs.iter().enumerate() {
        let xv = g.constant(x.clone());
        state = mlstm_step(&mut g, xv, &state, &p, Stabilization::Stabilized).unwrap();
        if !naive_failed {
            match mlstm_step(&mut g, xv, &naive, &p, Stabilization::Naive) {
                Ok(s) => naive = s,
                Err(Error::NonFinite { .. }) => naive_failed = true,
                Err(e) => panic!("unexpected {e}"),
            }
        }

        // h = σ(0)·Σ w_s v_s (k_s·q) / max(Σ w_s (k_s·q), 1), evaluated with
        // all weights scaled by exp(−max log-weight).
        let proj = |m: &Tensor, x: &Tensor| m.matmul(&x.transpose().unwrap()).unwrap().into_data();
        let q = proj(&w.w_q, x);
        let log_w: Vec<f64> = (0..=t)
            .map(|s| 60.0 * xs[s].data()[0] + xs[s + 1..=t].iter().map(|x| 60.0 * x.data()[1]).sum::<f64>())
            .collect();
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for s in 0..=t {
            let k: Vec<f64> = proj(&w.w_k, &xs[s]).iter().map(|v| v / (d as f64).sqrt()).collect();
            let v = proj(&w.w_v, &xs[s]);
            let kq: f64 = k.iter().zip(&q).map(|(a, b)| a * b).sum();
            let ws = (log_w[s] - top).exp();
            for j in 0..d {
                num[j] += ws * v[j] * kq;
            }
            den += ws * kq;
        }
        let den = den.max((-top).exp());
        for j in 0..d {
            let expect = 0.5 * num[j] / den;
            let h = g.value(state.h).data()[j];
            assert!(h.is_finite());
            assert!((h - expect).abs() < 1e-9 * expect.abs().max(1.0), "step {t}: {h} vs {expect}");
        }
    }
    assert!(naive_failed, "naive recurrence should overflow");
}

fn cell_gradcheck(slstm: bool, seed: u64) -> gradcheck::GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=8);
    let steps = rng.random_range(1..=8);
    let mut store = ParamStore::new();
    let sp = SLstmParams::init(&mut store, "s", input, hidden, &mut rng);
    let mp = MLstmParams::init(&mut store, "m", input, hidden, &mut rng);
    randomize(&mut store, &mut rng, 0.8);
    let x = store.add("x", random_tensor(&mut rng, steps, input, 1.0));
    let readout = random_tensor(&mut rng, steps, hidden, 1.0);
    gradcheck::check_params(&store, 1e-5, |g, bound| {
        let seq = bound.var(x);
        let out = if slstm {
            sequence_forward(g, seq, CellParams::SLstm(&sp.resolve(bound)), Stabilization::Stabilized)?
        } else {
            sequence_forward(g, seq, CellParams::MLstm(&mp.resolve(bound)), Stabilization::Stabilized)?
        };
        let r = g.constant(readout.clone());
        let weighted = g.mul(out, r)?;
        g.sum(weighted)
    })
    .unwrap()
}

#[test]
fn slstm_bptt_gradients() {
    for seed in 0..20 {
        let r = cell_gradcheck(true, seed);
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn mlstm_bptt_gradients() {
    for seed in 0..20 {
        let r = cell_gradcheck(false, 1000 + seed);
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn outputs_depend_on_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let sp = SLstmParams::init(&mut store, "s", 2, 3, &mut rng);
    let mp = MLstmParams::init(&mut store, "m", 2, 3, &mut rng);
    let seq = random_tensor(&mut rng, 6, 2, 1.0);
    let mut rows: Vec<&[f64]> = seq.data().chunks(2).collect();
    rows.reverse();
    let reversed = Tensor::from_rows(&rows).unwrap();
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let (s, m) = (sp.resolve(&bound), mp.resolve(&bound));
    let a = g.constant(seq);
    let b = g.constant(reversed);
    for cell in [CellParams::SLstm(&s), CellParams::MLstm(&m)] {
        let fa = sequence_forward(&mut g, a, cell, Stabilization::Stabilized).unwrap();
        let fb = sequence_forward(&mut g, b, cell, Stabilization::Stabilized).unwrap();
        let last = |g: &Graph, v| g.value(v).data()[15..18].to_vec();
        assert_ne!(last(&g, fa), last(&g, fb));
    }
}
