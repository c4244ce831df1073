//! Layer-fusion forward pass checked against a plain-loop recomputation
//! that reads the weights by name and shares no code with the network.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlstm_ecg_core::network::{FusionMode, FusionNetwork, NetworkConfig};
use xlstm_ecg_core::Spectrogram;

struct Weights(HashMap<String, (Vec<usize>, Vec<f64>)>);

impl Weights {
    fn matvec(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (shape, w) = &self.0[name];
        assert_eq!(shape[1], x.len(), "{name}");
        (0..shape[0])
            .map(|r| (0..shape[1]).map(|c| w[r * shape[1] + c] * x[c]).sum())
            .collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.0[name].1.clone()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn slstm(w: &Weights, p: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hidden = w.vec(&format!("{p}.b_i")).len();
    let (mut h, mut c, mut n) = (vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]);
    let mut out = Vec::new();
    for x in xs {
        let pre = |g: &str| {
            add(
                &add(&w.matvec(&format!("{p}.w_{g}"), x), &w.matvec(&format!("{p}.r_{g}"), &h)),
                &w.vec(&format!("{p}.b_{g}")),
            )
        };
        let (i, f, z, o) = (pre("i"), pre("f"), pre("z"), pre("o"));
        for j in 0..hidden {
            let (ig, fg) = (i[j].exp(), f[j].exp());
            c[j] = fg * c[j] + ig * z[j].tanh();
            n[j] = fg * n[j] + ig;
        }
        h = (0..hidden).map(|j| sigmoid(o[j]) * c[j] / n[j]).collect();
        out.push(h.clone());
    }
    out
}

fn mlstm(w: &Weights, p: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = w.vec(&format!("{p}.b_o")).len();
    let mut cm = vec![vec![0.0; d]; d];
    let mut n = vec![0.0; d];
    let mut out = Vec::new();
    for x in xs {
        let q = w.matvec(&format!("{p}.w_q"), x);
        let k: Vec<f64> = w.matvec(&format!("{p}.w_k"), x).iter().map(|v| v / (d as f64).sqrt()).collect();
        let v = w.matvec(&format!("{p}.w_v"), x);
        let ig = (w.matvec(&format!("{p}.w_i"), x)[0] + w.vec(&format!("{p}.b_i"))[0]).exp();
        let fg = (w.matvec(&format!("{p}.w_f"), x)[0] + w.vec(&format!("{p}.b_f"))[0]).exp();
        let o = add(&w.matvec(&format!("{p}.w_o"), x), &w.vec(&format!("{p}.b_o")));
        for r in 0..d {
            for c in 0..d {
                cm[r][c] = fg * cm[r][c] + ig * v[r] * k[c];
            }
            n[r] = fg * n[r] + ig * k[r];
        }
        let denom = n.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>().max(1.0);
        let h = (0..d)
            .map(|r| sigmoid(o[r]) * (0..d).map(|c| cm[r][c] * q[c]).sum::<f64>() / denom)
            .collect();
        out.push(h);
    }
    out
}

#[test]
fn layer_fusion_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..5 {
        let cfg = NetworkConfig {
            hidden_dim: 4,
            n_layers: 2,
            n_blocks: 1,
            fusion_mode: FusionMode::Layer,
            dropout_p: 0.5,
            n_classes: 3,
            use_lead_attention: false,
            n_leads: 2,
            n_bins: 3,
        };
        let mut net = FusionNetwork::new(cfg, &mut rng).unwrap();
        // Non-zero biases so every term is exercised.
        for t in net.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let frames = 5;
        let values: Vec<f64> = (0..frames * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = Spectrogram::new(frames, 2, vec![1.0; 3], vec![0.0; frames], values.clone()).unwrap();

        let weights = Weights(
            net.params()
                .iter()
                .map(|(n, t)| (n.to_string(), (t.shape().to_vec(), t.data().to_vec())))
                .collect(),
        );
        let mut xs: Vec<Vec<f64>> = values
            .chunks(6)
            .map(|row| {
                let scaled: Vec<f64> = weights.matvec("proj.w", row).iter().map(|v| v / 6f64.sqrt()).collect();
                add(&scaled, &weights.vec("proj.b"))
            })
            .collect();
        for l in 0..2 {
            let s = slstm(&weights, &format!("block0.layer{l}.slstm"), &xs);
            let m = mlstm(&weights, &format!("block0.layer{l}.mlstm"), &xs);
            xs = s.iter().zip(&m).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect()).collect();
        }
        let pooled: Vec<f64> = (0..4).map(|j| xs.iter().map(|r| r[j]).sum::<f64>() / frames as f64).collect();
        let expect: Vec<f64> = add(&weights.matvec("head.w", &pooled), &weights.vec("head.b"))
            .into_iter()
            .map(sigmoid)
            .collect();

        let got = net.predict(&spec).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}
