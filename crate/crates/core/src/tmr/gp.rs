//! Gaussian-process surrogate over log2 time-scale parameters and the
//! expected-improvement acquisition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::TemporalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyper {
    /// Matérn length scale in log2-α units.
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            length_scale: 0.3,
            signal_var: 1.0,
            noise_var: 1e-6,
        }
    }
}

/// Matérn ν = 5/2.
pub fn matern52(r: f64, hyper: &GpHyper) -> f64 {
    let s = 5f64.sqrt() * r / hyper.length_scale;
    hyper.signal_var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn to_log2(alphas: &[f64]) -> DVector<f64> {
    DVector::from_iterator(alphas.len(), alphas.iter().map(|a| a.log2()))
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyper,
    /// Observation sites in log2 coordinates.
    pub xs: Vec<DVector<f64>>,
    pub ys: DVector<f64>,
    /// Diagonal jitter added on top of the noise to factor the kernel matrix.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

/// Zero-mean GP posterior on the observed `(α, score)` pairs. Repeated α
/// values are merged into their mean score.
pub fn gp_fit(history: &[(Vec<f64>, f64)], hyper: &GpHyper) -> Result<GpModel> {
    if history.is_empty() {
        return Err(Error::invalid("history", None, "GP needs at least one observation"));
    }
    let dim = history[0].0.len();
    let mut sites: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for (alpha, y) in history {
        if alpha.len() != dim {
            return Err(Error::Dimension(format!("α of size {} among size {dim}", alpha.len())));
        }
        if !y.is_finite() || alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid(
                "history",
                None,
                "observations must be finite with positive α",
            ));
        }
        match sites.iter_mut().find(|(a, _, _)| a == alpha) {
            Some(site) => {
                site.1 += y;
                site.2 += 1;
            }
            None => sites.push((alpha.clone(), *y, 1)),
        }
    }
    let xs: Vec<DVector<f64>> = sites.iter().map(|(a, _, _)| to_log2(a)).collect();
    let ys = DVector::from_iterator(sites.len(), sites.iter().map(|(_, y, n)| y / *n as f64));
    let n = xs.len();
    let base = DMatrix::from_fn(n, n, |i, j| matern52((&xs[i] - &xs[j]).norm(), hyper));
    let mut jitter = 0.0;
    loop {
        let k = &base + DMatrix::identity(n, n) * (hyper.noise_var + jitter);
        if let Some(chol) = Cholesky::new(k) {
            let weights = chol.solve(&ys);
            return Ok(GpModel {
                hyper: *hyper,
                xs,
                ys,
                jitter,
                chol,
                weights,
            });
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > 1e-6 {
            return Err(Error::Other("GP kernel matrix is ill-conditioned".into()));
        }
    }
}

impl GpModel {
    fn k_star(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| matern52((xi - x).norm(), &self.hyper)),
        )
    }

    /// Posterior mean and variance at the log2 point `x`.
    pub fn predict_log2(&self, x: &DVector<f64>) -> (f64, f64) {
        let ks = self.k_star(x);
        let mean = ks.dot(&self.weights);
        let v = self.chol.solve(&ks);
        let var = (self.hyper.signal_var - ks.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn predict(&self, alphas: &[f64]) -> (f64, f64) {
        self.predict_log2(&to_log2(alphas))
    }
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `Δs·Φ(Δs/σ) + σ·φ(Δs/σ)` with `Δs = μ − best + ξ`; `max(Δs, 0)` when σ = 0.
pub fn expected_improvement(mean: f64, std: f64, incumbent: f64, xi: f64) -> f64 {
    let d = mean - incumbent + xi;
    if std <= 0.0 {
        return d.max(0.0);
    }
    let z = d / std;
    (d * norm_cdf(z) + std * norm_pdf(z)).max(0.0)
}

/// EI of `candidate` against the incumbent's posterior mean.
pub fn ei_acquire(gp: &GpModel, candidate: &TemporalParams, incumbent_best: f64, xi: f64) -> f64 {
    let (mean, var) = gp.predict(&candidate.alphas);
    expected_improvement(mean, var.sqrt(), incumbent_best, xi)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximises EI over the box `bounds` (α units) for `segments` parameters:
/// uniform seeds in log2 space, each refined by coordinate-wise golden
/// section (bracket ends included). Returns the maximiser and its EI.
pub fn next_alpha(
    gp: &GpModel,
    bounds: (f64, f64),
    segments: usize,
    incumbent_best: f64,
    xi: f64,
    seed: u64,
    n_restarts: usize,
) -> Result<(TemporalParams, f64)> {
    let (lo, hi) = (bounds.0.log2(), bounds.1.log2());
    if !(lo <= hi) || segments == 0 {
        return Err(Error::invalid(
            "bounds",
            None,
            "need 0 < min ≤ max and at least one segment",
        ));
    }
    let ei = |x: &DVector<f64>| {
        let (m, v) = gp.predict_log2(x);
        expected_improvement(m, v.sqrt(), incumbent_best, xi)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for _ in 0..n_restarts.max(1) {
        let mut x = DVector::from_fn(segments, |_, _| if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        let mut fx = ei(&x);
        let mut width = 0.5 * (hi - lo);
        for _sweep in 0..6 {
            for i in 0..segments {
                let (a, b) = ((x[i] - width).max(lo), (x[i] + width).min(hi));
                if b - a <= 1e-12 {
                    continue;
                }
                let line = |t: f64| {
                    let mut y = x.clone();
                    y[i] = t;
                    ei(&y)
                };
                let (t, ft) = golden_max(line, a, b, 1e-5);
                for (cand, fc) in [(t, ft), (a, line(a)), (b, line(b))] {
                    if fc > fx {
                        x[i] = cand;
                        fx = fc;
                    }
                }
            }
            width *= 0.5;
        }
        if best.as_ref().is_none_or(|(_, fb)| fx > *fb) {
            best = Some((x, fx));
        }
    }
    let (x, fx) = best.expect("at least one restart");
    let alphas = x.iter().map(|v| v.exp2().clamp(bounds.0, bounds.1)).collect();
    Ok((TemporalParams::new(alphas, bounds)?, fx))
}
