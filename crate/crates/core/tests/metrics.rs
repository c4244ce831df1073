use proptest::prelude::*;
use xlstm_ecg_core::metrics::{
    average_precision, binary_auc, confusion_matrices, cooccurrence, macro_auc, macro_prf1, mean_average_precision,
    multilabel_accuracy, threshold_predict,
};

/// Scores on a coarse grid so ties are frequent, plus 0/1 labels.
fn instance(max_n: usize, max_c: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<u8>>)> {
    (2..=max_n, 1..=max_c).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(prop::collection::vec((0u8..=10).prop_map(|v| v as f64 / 10.0), c), n),
            prop::collection::vec(prop::collection::vec(0u8..=1, c), n),
        )
    })
}

fn pairwise_auc(s: &[f64], y: &[u8]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0usize);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

fn col<T: Copy>(m: &[Vec<T>], k: usize) -> Vec<T> {
    m.iter().map(|r| r[k]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pairwise_oracle((p, y) in instance(40, 5)) {
        for k in 0..p[0].len() {
            prop_assert_eq!(binary_auc(&col(&p, k), &col(&y, k)), pairwise_auc(&col(&p, k), &col(&y, k)));
        }
        let oracle: Vec<f64> = (0..p[0].len()).filter_map(|k| pairwise_auc(&col(&p, k), &col(&y, k))).collect();
        match macro_auc(&p, &y) {
            Ok(r) => {
                let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
                prop_assert_eq!(r.mean, mean);
                prop_assert_eq!(r.skipped.len(), p[0].len() - oracle.len());
            }
            Err(_) => prop_assert!(oracle.is_empty()),
        }
    }

    #[test]
    fn confusion_matches_loop_oracle((p, y) in instance(50, 5)) {
        let yhat = threshold_predict(&p, 0.5);
        let counts = confusion_matrices(&yhat, &y).unwrap();
        for (k, c) in counts.iter().enumerate() {
            let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
            for i in 0..y.len() {
                for pred in 0..=1u8 {
                    for truth in 0..=1u8 {
                        if yhat[i][k] == pred && y[i][k] == truth {
                            match (pred, truth) {
                                (1, 1) => tp += 1,
                                (1, 0) => fp += 1,
                                (0, 0) => tn += 1,
                                _ => fneg += 1,
                            }
                        }
                    }
                }
            }
            prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fneg));
            prop_assert_eq!(c.total(), y.len() as u64);
        }
        // pooled accuracy is the mean of per-class accuracies
        let acc = multilabel_accuracy(&yhat, &y).unwrap();
        let per_class = counts.iter().map(|c| c.accuracy()).sum::<f64>() / counts.len() as f64;
        prop_assert!((acc - per_class).abs() < 1e-12);
    }

    #[test]
    fn prf1_matches_loop_oracle((p, y) in instance(50, 5)) {
        let yhat = threshold_predict(&p, 0.5);
        let c = y[0].len();
        let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let tp = (0..y.len()).filter(|&i| yhat[i][k] == 1 && y[i][k] == 1).count() as f64;
            let fp = (0..y.len()).filter(|&i| yhat[i][k] == 1 && y[i][k] == 0).count() as f64;
            let fneg = (0..y.len()).filter(|&i| yhat[i][k] == 0 && y[i][k] == 1).count() as f64;
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            ps += prec;
            rs += rec;
            fs += f1;
        }
        let r = macro_prf1(&yhat, &y).unwrap();
        prop_assert_eq!(r.precision, ps / c as f64);
        prop_assert_eq!(r.recall, rs / c as f64);
        prop_assert_eq!(r.f1, fs / c as f64);
    }

    #[test]
    fn map_matches_loop_oracle((p, y) in instance(30, 4)) {
        for k in 0..p[0].len() {
            let (s, l) = (col(&p, k), col(&y, k));
            // rank of item i: items with a higher score, or equal score and lower index, come first
            let n_pos = l.iter().filter(|&&v| v == 1).count();
            let oracle = (n_pos > 0).then(|| {
                let mut total = 0.0;
                for i in (0..s.len()).filter(|&i| l[i] == 1) {
                    let ahead = |j: usize| s[j] > s[i] || (s[j] == s[i] && j < i);
                    let rank = (0..s.len()).filter(|&j| ahead(j)).count() + 1;
                    let hits = (0..s.len()).filter(|&j| l[j] == 1 && (ahead(j) || j == i)).count();
                    total += hits as f64 / rank as f64;
                }
                total / n_pos as f64
            });
            let got = average_precision(&s, &l);
            match (got, oracle) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn cooccurrence_matches_triple_loop((p, y) in instance(30, 4)) {
        let yhat = threshold_predict(&p, 0.5);
        let m = cooccurrence(&y, &yhat).unwrap();
        let c = y[0].len();
        for j in 0..c {
            for k in 0..c {
                let mut s = 0u64;
                for i in 0..y.len() {
                    s += u64::from(y[i][j]) * u64::from(yhat[i][k]);
                }
                prop_assert_eq!(m[j][k], s);
            }
        }
        let tt = cooccurrence(&y, &y).unwrap();
        for j in 0..c {
            prop_assert_eq!(tt[j][j], y.iter().filter(|r| r[j] == 1).count() as u64);
            for k in 0..c {
                prop_assert_eq!(tt[j][k], tt[k][j]);
            }
        }
    }

    #[test]
    fn rank_metrics_invariant_under_monotone_transform((p, y) in instance(30, 4)) {
        let q: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).collect();
        match (macro_auc(&p, &y), macro_auc(&q, &y)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.mean, b.mean),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
        match (mean_average_precision(&p, &y), mean_average_precision(&q, &y)) {
            (Ok(a), Ok(b)) => prop_assert!((a.mean - b.mean).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}
