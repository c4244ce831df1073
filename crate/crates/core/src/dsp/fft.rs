//! Mixed-radix Stockham DFT.
//!
//! Lengths are factored into radices 4, 2, 3, 5 and then any remaining
//! primes. Radix 2 and 4 have dedicated butterflies; every other radix uses
//! a direct butterfly of that size, so a prime length degrades to the naive
//! O(n²) transform. The Stockham ordering ping-pongs between two buffers and
//! needs no digit-reversal pass.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math;

pub type Complex = Complex64;

/// Direct evaluation of `X[k] = Σ x[j]·e^{−2πi jk/n}`.
pub fn dft_naive(x: &[Complex]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (j, &v)| {
                // reduce jk mod n before scaling to keep the angle small
                let e = ((j * k) % n) as f64;
                let ang = -2.0 * core::f64::consts::PI * e / n as f64;
                acc + v * Complex::new(math::cos(ang), math::sin(ang))
            })
        })
        .collect()
}

/// Forward DFT through a one-off [`FftPlan`].
pub fn dft(x: &[Complex]) -> Vec<Complex> {
    if x.is_empty() {
        return Vec::new();
    }
    FftPlan::new(x.len()).forward(x)
}

/// Precomputed factorization and twiddles for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    factors: Vec<usize>,
    /// `W_N^k` for `k in 0..N`.
    twiddles: Vec<Complex>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "transform length must be positive");
        let twiddles = (0..n)
            .map(|k| {
                let ang = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                Complex::new(math::cos(ang), math::sin(ang))
            })
            .collect();
        Self {
            n,
            factors: factorize(n),
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// True when every prime factor is 2, 3 or 5.
    pub fn is_smooth(&self) -> bool {
        self.factors.iter().all(|&p| p <= 5)
    }

    pub fn forward(&self, x: &[Complex]) -> Vec<Complex> {
        assert_eq!(x.len(), self.n, "input length must match the plan");
        let mut a = x.to_vec();
        let mut b = vec![Complex::new(0.0, 0.0); self.n];
        self.transform(&mut a, &mut b);
        a
    }

    /// Transforms `a` in place, using `b` as scratch of the same length.
    fn transform(&self, a: &mut Vec<Complex>, b: &mut Vec<Complex>) {
        let big_n = self.n;
        let mut n = big_n;
        let mut s = 1;
        let mut roots = Vec::new();
        for &p in &self.factors {
            let m = n / p;
            // twiddle W_n^e lives at W_N^{e·N/n}
            let step = big_n / n;
            match p {
                2 => stage2(a, b, m, s, step, &self.twiddles),
                4 => stage4(a, b, m, s, step, &self.twiddles),
                _ => {
                    roots.clear();
                    roots.extend((0..p).map(|e| self.twiddles[e * (big_n / p)]));
                    stage_generic(a, b, p, m, s, step, &self.twiddles, &roots);
                }
            }
            core::mem::swap(a, b);
            n = m;
            s *= p;
        }
    }

    /// Magnitudes of bins `0..=n/2` for a real input zero-padded to `n`.
    pub fn real_magnitudes(&self, frame: &[f64]) -> Vec<f64> {
        self.real_magnitudes_pair(frame, &[]).0
    }

    /// Magnitudes of bins `0..=n/2` for two real inputs, computed with one
    /// complex transform of `a + i·b`.
    pub fn real_magnitudes_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert!(a.len() <= self.n && b.len() <= self.n);
        let n = self.n;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (z, &v) in buf.iter_mut().zip(a) {
            z.re = v;
        }
        for (z, &v) in buf.iter_mut().zip(b) {
            z.im = v;
        }
        let mut scratch = vec![Complex::new(0.0, 0.0); n];
        self.transform(&mut buf, &mut scratch);
        let half = n / 2 + 1;
        let mut ma = Vec::with_capacity(half);
        let mut mb = Vec::with_capacity(half);
        for k in 0..half {
            let z = buf[k];
            let zc = buf[(n - k) % n].conj();
            // A = (Z[k] + conj Z[n−k])/2, B = (Z[k] − conj Z[n−k])/(2i)
            ma.push(((z + zc) * 0.5).norm());
            mb.push(((z - zc) * 0.5).norm());
        }
        (ma, mb)
    }
}

fn stage2(x: &[Complex], y: &mut [Complex], m: usize, s: usize, step: usize, tw: &[Complex]) {
    for j in 0..m {
        let w = tw[j * step];
        for k in 0..s {
            let a = x[k + s * j];
            let b = x[k + s * (j + m)];
            y[k + s * 2 * j] = a + b;
            y[k + s * (2 * j + 1)] = (a - b) * w;
        }
    }
}

fn stage4(x: &[Complex], y: &mut [Complex], m: usize, s: usize, step: usize, tw: &[Complex]) {
    for j in 0..m {
        let (w1, w2, w3) = (tw[j * step], tw[2 * j * step], tw[3 * j * step]);
        for k in 0..s {
            let a0 = x[k + s * j];
            let a1 = x[k + s * (j + m)];
            let a2 = x[k + s * (j + 2 * m)];
            let a3 = x[k + s * (j + 3 * m)];
            let t0 = a0 + a2;
            let t1 = a0 - a2;
            let t2 = a1 + a3;
            // −i·(a1 − a3)
            let d = a1 - a3;
            let t3 = Complex::new(d.im, -d.re);
            let base = k + s * 4 * j;
            y[base] = t0 + t2;
            y[base + s] = (t1 + t3) * w1;
            y[base + 2 * s] = (t0 - t2) * w2;
            y[base + 3 * s] = (t1 - t3) * w3;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn stage_generic(
    x: &[Complex],
    y: &mut [Complex],
    p: usize,
    m: usize,
    s: usize,
    step: usize,
    tw: &[Complex],
    roots: &[Complex],
) {
    for j in 0..m {
        for k in 0..s {
            for r in 0..p {
                let mut acc = Complex::new(0.0, 0.0);
                // W_p^{qr mod p}
                let mut e = 0;
                for q in 0..p {
                    acc += x[k + s * (j + q * m)] * roots[e];
                    e += r;
                    if e >= p {
                        e -= p;
                    }
                }
                y[k + s * (p * j + r)] = acc * tw[j * r * step];
            }
        }
    }
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    for p in [4usize, 2, 3, 5] {
        while n.is_multiple_of(p) {
            factors.push(p);
            n /= p;
        }
    }
    let mut p = 7;
    while p * p <= n {
        while n.is_multiple_of(p) {
            factors.push(p);
            n /= p;
        }
        p += 2;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}
