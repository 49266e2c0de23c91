#![allow(dead_code)]

use dpm_stream::expfam::{GammaFactor, GaussianMeanFactor};
use dpm_stream::{ComponentPosterior, MixtureState, Responsibilities};
use ndarray::Array2;
use rand::Rng;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The range is first cut into fixed panels so that narrow peaks are not
/// missed by the coarse initial estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let w = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            simpson(
                f,
                a + i as f64 * w,
                a + (i + 1) as f64 * w,
                tol / PANELS as f64,
            )
        })
        .sum()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 30)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn ln_gamma_ref(x: f64) -> f64 {
    dpm_stream::special::ln_gamma(x)
}

/// Gamma log density with rate parameterization, written out directly.
pub fn gamma_log_pdf(tau: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma_ref(a) + (a - 1.0) * tau.ln() - b * tau
}

pub fn component(h: Vec<f64>, s: f64, a: f64, b: f64) -> ComponentPosterior {
    ComponentPosterior::new(
        GaussianMeanFactor::new(h, s).unwrap(),
        GammaFactor::new(a, b).unwrap(),
    )
}

pub fn random_component<R: Rng>(rng: &mut R, dim: usize) -> ComponentPosterior {
    let s = rng.random_range(0.2..20.0);
    let h = (0..dim).map(|_| rng.random_range(-5.0..5.0) * s).collect();
    component(
        h,
        s,
        rng.random_range(0.5..30.0),
        rng.random_range(0.2..20.0),
    )
}

pub fn random_state<R: Rng>(rng: &mut R, trunc: usize, dim: usize) -> MixtureState {
    MixtureState {
        components: (0..trunc).map(|_| random_component(rng, dim)).collect(),
    }
}

/// Random row-stochastic matrix; each row has a random number of zeros.
pub fn random_phi<R: Rng>(rng: &mut R, n: usize, trunc: usize) -> Responsibilities {
    let mut phi = Array2::<f64>::zeros((n, trunc));
    for mut row in phi.rows_mut() {
        for v in row.iter_mut() {
            *v = if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            };
        }
        if row.sum() == 0.0 {
            row[rng.random_range(0..trunc)] = 1.0;
        }
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Responsibilities::new(phi).unwrap()
}

pub fn random_data<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-8.0..8.0))
}

/// Every assignment vector in `0..trunc` of length `n`, with its probability
/// under independent categorical rows of `phi`.
pub fn enumerate_assignments(phi: &Array2<f64>) -> Vec<(Vec<usize>, f64)> {
    let (n, t) = phi.dim();
    let total = t.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut z = Vec::with_capacity(n);
        let mut c = code;
        let mut p = 1.0;
        for i in 0..n {
            let k = c % t;
            c /= t;
            p *= phi[[i, k]];
            z.push(k);
        }
        if p > 0.0 {
            out.push((z, p));
        }
    }
    out
}
