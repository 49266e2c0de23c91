//! Collapsed variational inference for a truncated DP Gaussian mixture.
//!
//! Mixture weights are integrated out, so the assignment prior is a
//! function of the soft counts `N_k`, `N_{>k}` and `N_{>=k}`. Expectations
//! of logs (and log-gammas) of those counts use a second-order Taylor
//! expansion around the mean count, with Poisson-binomial variances.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{
    gamma_moments, mix_natural, ComponentPosterior, GammaFactor, GaussianMeanFactor,
};
use crate::forgetting::{log_trunc_exp_normalizer, ForgettingState};
use crate::special::{ln_gamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Responsibilities below this value are flushed to zero.
pub const PHI_FLOOR: f64 = 1e-12;

/// How responsibilities are seeded at the start of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Rows drawn from a symmetric Dirichlet(1).
    Random,
    /// One-hot on the component whose current mean is closest.
    NearestMean,
    /// Soft assignment against the warm-started components; falls back to
    /// distance-weighted seeding when the warm start carries no information.
    Warm,
    /// Hard assignment to `T` centres picked by D^2-weighted sampling.
    Seeded,
    /// Fit from both `Warm` and `Seeded` and keep the higher final objective.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub alpha: f64,
    pub trunc: usize,
    pub dim: usize,
    pub prior: ComponentPosterior,
    pub max_iters: usize,
    pub tol: f64,
    pub init: InitStrategy,
}

impl ModelConfig {
    /// `alpha = 2`, `T = 10`, standard prior, 100 iterations, `tol = 1e-4`.
    pub fn new(dim: usize) -> Self {
        Self {
            alpha: 2.0,
            trunc: 10,
            dim,
            prior: ComponentPosterior::standard(dim),
            max_iters: 100,
            tol: 1e-4,
            init: InitStrategy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("model.alpha", "must be positive"));
        }
        if self.trunc < 2 {
            return Err(Error::config("model.trunc", "must be at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::config("model.dim", "must be positive"));
        }
        if self.prior.dim() != self.dim {
            return Err(Error::config(
                "model.prior",
                "dimension does not match model.dim",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("model.tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("model.max_iters", "must be positive"));
        }
        Ok(())
    }

    pub fn prior_state(&self) -> MixtureState {
        MixtureState::replicated(&self.prior, self.trunc)
    }
}

/// Row-stochastic `N x T` matrix of assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    phi: Array2<f64>,
}

impl Responsibilities {
    pub fn new(phi: Array2<f64>) -> Result<Self> {
        for (n, row) in phi.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Domain(format!(
                    "row {n} has a negative or non-finite entry"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {n} sums to {sum}")));
            }
        }
        Ok(Self { phi })
    }

    /// Flush tiny entries and renormalize each row.
    pub(crate) fn from_unnormalized(mut phi: Array2<f64>) -> Self {
        for mut row in phi.axis_iter_mut(Axis(0)) {
            let sum: f64 = row.sum();
            row.mapv_inplace(|p| p / sum);
            row.mapv_inplace(|p| if p < PHI_FLOOR { 0.0 } else { p });
            let sum: f64 = row.sum();
            row.mapv_inplace(|p| p / sum);
        }
        Self { phi }
    }

    pub fn n_points(&self) -> usize {
        self.phi.nrows()
    }

    pub fn trunc(&self) -> usize {
        self.phi.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.phi.row(n)
    }

    /// Row-major CSV dump, one row of `T` values per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.phi.axis_iter(Axis(0)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Means and variances of the soft counts under independent `q(z_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountStats {
    pub e_nk: Vec<f64>,
    pub v_nk: Vec<f64>,
    pub e_gt: Vec<f64>,
    pub v_gt: Vec<f64>,
    /// Variance of `N_{>=k}`; not the sum of `v_nk` and `v_gt`, which are correlated.
    pub v_ge: Vec<f64>,
}

impl CountStats {
    pub fn zeros(trunc: usize) -> Self {
        Self {
            e_nk: vec![0.0; trunc],
            v_nk: vec![0.0; trunc],
            e_gt: vec![0.0; trunc],
            v_gt: vec![0.0; trunc],
            v_ge: vec![0.0; trunc],
        }
    }

    pub fn trunc(&self) -> usize {
        self.e_nk.len()
    }

    pub fn e_ge(&self, k: usize) -> f64 {
        self.e_nk[k] + self.e_gt[k]
    }

    fn add_row(&mut self, row: ArrayView1<f64>, sign: f64) {
        let t = self.trunc();
        let mut tail = 0.0;
        for k in (0..t).rev() {
            let p = row[k];
            let ge = (p + tail).min(1.0);
            self.e_nk[k] += sign * p;
            self.v_nk[k] += sign * p * (1.0 - p);
            self.e_gt[k] += sign * tail;
            self.v_gt[k] += sign * tail * (1.0 - tail);
            self.v_ge[k] += sign * ge * (1.0 - ge);
            tail = ge;
        }
    }

    /// Leave-one-out statistics with the contribution of `row` removed.
    pub fn without_point(&self, row: ArrayView1<f64>) -> CountStats {
        let mut out = self.clone();
        out.add_row(row, -1.0);
        out.clamp_nonnegative();
        out
    }

    fn clamp_nonnegative(&mut self) {
        for v in [
            &mut self.e_nk,
            &mut self.v_nk,
            &mut self.e_gt,
            &mut self.v_gt,
            &mut self.v_ge,
        ] {
            for x in v.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }
}

/// Variational global parameters, one component posterior per truncation slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureState {
    pub components: Vec<ComponentPosterior>,
}

impl MixtureState {
    pub fn replicated(prior: &ComponentPosterior, trunc: usize) -> Self {
        Self {
            components: vec![prior.clone(); trunc],
        }
    }

    pub fn trunc(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.dim())
    }

    fn check_shape(&self, trunc: usize, dim: usize) -> Result<()> {
        if self.trunc() != trunc {
            return Err(Error::DimensionMismatch {
                expected: trunc,
                got: self.trunc(),
            });
        }
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

pub fn compute_counts(phi: &Responsibilities) -> CountStats {
    let mut counts = CountStats::zeros(phi.trunc());
    for row in phi.phi.axis_iter(Axis(0)) {
        counts.add_row(row, 1.0);
    }
    counts.clamp_nonnegative();
    counts
}

/// Second-order approximation of `E[ln(c + X)]`.
#[inline]
fn taylor_log(c: f64, mean: f64, var: f64) -> f64 {
    let m = c + mean;
    m.ln() - var / (2.0 * m * m)
}

/// Second-order approximation of `E[ln Gamma(c + X)]`.
#[inline]
fn taylor_ln_gamma(c: f64, mean: f64, var: f64) -> f64 {
    let m = c + mean;
    ln_gamma(m) + 0.5 * trigamma(m) * var
}

#[inline]
fn own_factor(counts: &CountStats, alpha: f64, k: usize) -> f64 {
    if k + 1 == counts.trunc() {
        // the last slot takes all remaining stick mass
        return 0.0;
    }
    taylor_log(1.0, counts.e_nk[k], counts.v_nk[k])
        - taylor_log(1.0 + alpha, counts.e_ge(k), counts.v_ge[k])
}

#[inline]
fn stick_factor(counts: &CountStats, alpha: f64, j: usize) -> f64 {
    taylor_log(alpha, counts.e_gt[j], counts.v_gt[j])
        - taylor_log(1.0 + alpha, counts.e_ge(j), counts.v_ge[j])
}

/// Approximate `E[ln p(z_n = k | z_-n)]` given leave-one-out counts.
pub fn expected_log_assignment_prior(counts_minus_n: &CountStats, alpha: f64, k: usize) -> f64 {
    let sticks: f64 = (0..k).map(|j| stick_factor(counts_minus_n, alpha, j)).sum();
    own_factor(counts_minus_n, alpha, k) + sticks
}

/// All `T` assignment-prior terms for one point, written into `out`.
fn assignment_prior_row(counts_minus_n: &CountStats, alpha: f64, out: &mut [f64]) {
    let mut acc = 0.0;
    for (k, o) in out.iter_mut().enumerate() {
        *o = own_factor(counts_minus_n, alpha, k) + acc;
        if k + 1 < counts_minus_n.trunc() {
            acc += stick_factor(counts_minus_n, alpha, k);
        }
    }
}

/// `E_q[ln N(x; mu, tau^-1 I)]` under a component posterior.
pub fn expected_log_lik(x: ArrayView1<f64>, comp: &ComponentPosterior) -> f64 {
    let d = x.len() as f64;
    let (e_tau, e_log_tau) = gamma_moments(&comp.prec_factor);
    let sq = comp
        .mean_factor
        .sq_dist_to_mean(x.as_slice().expect("contiguous row"));
    0.5 * d * (e_log_tau - LN_2PI) - 0.5 * e_tau * (sq + d / comp.mean_factor.s)
}

fn check_data(data: ArrayView2<f64>) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Conjugate update of every component: Gaussian factor first, then Gamma
/// factor using the fresh Gaussian moments.
pub fn update_global(
    data: ArrayView2<f64>,
    phi: &Responsibilities,
    prior: &MixtureState,
    state: &MixtureState,
) -> Result<MixtureState> {
    check_data(data)?;
    let d = data.ncols();
    prior.check_shape(phi.trunc(), d)?;
    state.check_shape(phi.trunc(), d)?;
    if phi.n_points() != data.nrows() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            got: phi.n_points(),
        });
    }
    let weights = phi.as_array();
    let nk = weights.sum_axis(Axis(0));
    // T x d weighted sums
    let sx = weights.t().dot(&data);

    let components = (0..phi.trunc())
        .map(|k| {
            let p = &prior.components[k];
            let e_tau = state.components[k].prec_factor.mean();
            let s = p.mean_factor.s + e_tau * nk[k];
            let h: Vec<f64> = p
                .mean_factor
                .h
                .iter()
                .zip(sx.row(k))
                .map(|(h0, sx)| h0 + e_tau * sx)
                .collect();
            let mean_factor = GaussianMeanFactor { h, s };
            let m = mean_factor.mean();
            let spread: f64 = data
                .axis_iter(Axis(0))
                .zip(weights.column(k))
                .filter(|(_, &w)| w > 0.0)
                .map(|(x, &w)| {
                    let sq: f64 = x.iter().zip(&m).map(|(xi, mi)| (xi - mi) * (xi - mi)).sum();
                    w * (sq + d as f64 / s)
                })
                .sum();
            let prec_factor = GammaFactor {
                a: p.prec_factor.a + 0.5 * d as f64 * nk[k],
                b: p.prec_factor.b + 0.5 * spread,
            };
            ComponentPosterior::new(mean_factor, prec_factor)
        })
        .collect();
    Ok(MixtureState { components })
}

/// Unnormalized log responsibilities for every point against `state`, with
/// the assignment prior taken from `counts` minus each point's own row
/// (when `leave_out` is given).
fn log_resp(
    data: ArrayView2<f64>,
    state: &MixtureState,
    counts: &CountStats,
    leave_out: Option<&Responsibilities>,
    alpha: f64,
) -> Array2<f64> {
    let t = state.trunc();
    let n = data.nrows();
    let mut out = Array2::<f64>::zeros((n, t));
    let mut prior_row = vec![0.0; t];
    let shared_prior = leave_out.is_none().then(|| {
        let mut row = vec![0.0; t];
        assignment_prior_row(counts, alpha, &mut row);
        row
    });
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let prior_terms: &[f64] = match (&shared_prior, leave_out) {
            (Some(p), _) => p,
            (None, Some(phi)) => {
                let loo = counts.without_point(phi.row(i));
                assignment_prior_row(&loo, alpha, &mut prior_row);
                &prior_row
            }
            (None, None) => unreachable!(),
        };
        let x = data.row(i);
        for k in 0..t {
            row[k] = prior_terms[k] + expected_log_lik(x, &state.components[k]);
        }
    }
    out
}

fn softmax_rows(mut logits: Array2<f64>) -> Responsibilities {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
    }
    Responsibilities::from_unnormalized(logits)
}

/// One parallel sweep of the local update against a frozen count snapshot.
pub fn update_local(
    data: ArrayView2<f64>,
    state: &MixtureState,
    phi: &Responsibilities,
    alpha: f64,
) -> Responsibilities {
    let counts = compute_counts(phi);
    softmax_rows(log_resp(data, state, &counts, Some(phi), alpha))
}

/// Responsibilities for new points (not part of `counts`) under frozen globals.
pub fn assign_new_points(
    data: ArrayView2<f64>,
    state: &MixtureState,
    counts: &CountStats,
    alpha: f64,
) -> Responsibilities {
    softmax_rows(log_resp(data, state, counts, None, alpha))
}

/// Seed responsibilities for a batch given the warm-started state.
pub fn init_responsibilities<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    state: &MixtureState,
    alpha: f64,
    strategy: InitStrategy,
    rng: &mut R,
) -> Responsibilities {
    let n = data.nrows();
    let t = state.trunc();
    match strategy {
        InitStrategy::Random => {
            let mut phi = Array2::<f64>::zeros((n, t));
            for v in phi.iter_mut() {
                let e: f64 = Exp1.sample(rng);
                *v = e.max(f64::MIN_POSITIVE);
            }
            Responsibilities::from_unnormalized(phi)
        }
        InitStrategy::NearestMean => {
            let means: Vec<Vec<f64>> = state.components.iter().map(|c| c.mean()).collect();
            let mut phi = Array2::<f64>::zeros((n, t));
            for (i, x) in data.axis_iter(Axis(0)).enumerate() {
                phi[[i, nearest(x, &means)]] = 1.0;
            }
            Responsibilities { phi }
        }
        InitStrategy::Warm => {
            if is_uninformative(state) {
                seed_by_distance(data, t, rng)
            } else {
                assign_new_points(data, state, &CountStats::zeros(t), alpha)
            }
        }
        InitStrategy::Seeded | InitStrategy::Auto => seed_by_distance(data, t, rng),
    }
}

fn nearest(x: ArrayView1<f64>, means: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, m) in means.iter().enumerate() {
        let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// True when every component is identical, so a warm start carries no information.
pub fn is_uninformative(state: &MixtureState) -> bool {
    let first = &state.components[0];
    state.components.iter().all(|c| c == first)
}

/// D^2-weighted centre seeding over all `t` slots followed by hard nearest-centre assignment.
fn seed_by_distance<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    t: usize,
    rng: &mut R,
) -> Responsibilities {
    let n = data.nrows();
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(t);
    centres.push(data.row(rng.random_range(0..n)).to_vec());
    let mut dist: Vec<f64> = data
        .axis_iter(Axis(0))
        .map(|x| {
            x.iter()
                .zip(&centres[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    while centres.len() < t.min(n) {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(next).to_vec();
        for (i, x) in data.axis_iter(Axis(0)).enumerate() {
            let d: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i] = dist[i].min(d);
        }
        centres.push(c);
    }
    let mut phi = Array2::<f64>::zeros((n, t));
    for (i, x) in data.axis_iter(Axis(0)).enumerate() {
        phi[[i, nearest(x, &centres)]] = 1.0;
    }
    Responsibilities { phi }
}

/// Additive pieces of the (surrogate) evidence lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    pub data: f64,
    pub prior: f64,
    pub global_entropy: f64,
    pub assignment: f64,
    pub local_entropy: f64,
    pub rho: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.data
            + self.prior
            + self.global_entropy
            + self.assignment
            + self.local_entropy
            + self.rho
    }
}

/// Approximate `E_q[ln p(z)]` under the truncated collapsed prior.
pub fn expected_log_assignment_joint(counts: &CountStats, alpha: f64) -> f64 {
    (0..counts.trunc() - 1)
        .map(|k| {
            alpha.ln()
                + taylor_ln_gamma(1.0, counts.e_nk[k], counts.v_nk[k])
                + taylor_ln_gamma(alpha, counts.e_gt[k], counts.v_gt[k])
                - taylor_ln_gamma(1.0 + alpha, counts.e_ge(k), counts.v_ge[k])
        })
        .sum()
}

/// Surrogate ELBO, split into its terms.
///
/// With a fixed forgetting weight the prior term is `E_q[ln p_hat]` under the
/// normalized power prior. Otherwise each component's prior term is the
/// `E[rho]`-weighted combination of `E_q[ln q_prev]` and `E_q[ln G0]`, and the
/// truncated-exponential prior/entropy terms of every `rho` are added.
pub fn surrogate_elbo_terms(
    data: ArrayView2<f64>,
    state: &MixtureState,
    phi: &Responsibilities,
    prev: &MixtureState,
    prior0: &ComponentPosterior,
    forgetting: &ForgettingState,
    alpha: f64,
) -> Result<ElboTerms> {
    let d = data.ncols();
    let t = state.trunc();
    prev.check_shape(t, d)?;
    state.check_shape(t, d)?;
    let mut terms = ElboTerms::default();

    for (x, row) in data.axis_iter(Axis(0)).zip(phi.phi.axis_iter(Axis(0))) {
        for k in 0..t {
            let p = row[k];
            if p > 0.0 {
                terms.data += p * expected_log_lik(x, &state.components[k]);
                terms.local_entropy -= p * p.ln();
            }
        }
    }

    for (k, (q, q_prev)) in state.components.iter().zip(&prev.components).enumerate() {
        terms.prior += match forgetting.fixed_rho {
            Some(rho) => q.expected_log_density(&mix_natural(q_prev, prior0, rho)?),
            None => {
                let r = forgetting.e_rho_for(k);
                r * q.expected_log_density(q_prev) + (1.0 - r) * q.expected_log_density(prior0)
            }
        };
        terms.global_entropy += q.entropy();
    }

    if forgetting.fixed_rho.is_none() {
        let log_z_gamma = log_trunc_exp_normalizer(forgetting.gamma);
        terms.rho = forgetting
            .omegas
            .iter()
            .zip(&forgetting.e_rho)
            .map(|(&w, &r)| (forgetting.gamma - w) * r - log_z_gamma + log_trunc_exp_normalizer(w))
            .sum();
    }

    terms.assignment = expected_log_assignment_joint(&compute_counts(phi), alpha);
    Ok(terms)
}

pub fn surrogate_elbo(
    data: ArrayView2<f64>,
    state: &MixtureState,
    phi: &Responsibilities,
    prev: &MixtureState,
    prior0: &ComponentPosterior,
    forgetting: &ForgettingState,
    alpha: f64,
) -> Result<f64> {
    Ok(surrogate_elbo_terms(data, state, phi, prev, prior0, forgetting, alpha)?.total())
}

/// Expected stick-breaking weights plus the stick mass left past slot `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    pub weights: Vec<f64>,
    pub remainder: f64,
}

impl MixtureWeights {
    /// Weights rescaled to sum to one over the truncated slots.
    pub fn normalized(&self) -> Vec<f64> {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / sum).collect()
    }
}

pub fn expected_mixture_weights(counts: &CountStats, alpha: f64) -> MixtureWeights {
    let mut left = 1.0;
    let weights = (0..counts.trunc())
        .map(|k| {
            let beta = (1.0 + counts.e_nk[k]) / (1.0 + alpha + counts.e_nk[k] + counts.e_gt[k]);
            let w = beta * left;
            left *= 1.0 - beta;
            w
        })
        .collect();
    MixtureWeights {
        weights,
        remainder: left,
    }
}

/// Mean per-point log density of `test` under the plug-in mixture.
pub fn predictive_log_lik(
    test: ArrayView2<f64>,
    state: &MixtureState,
    weights: &[f64],
) -> Result<f64> {
    if test.nrows() == 0 {
        return Err(Error::Empty("test set".into()));
    }
    if weights.len() != state.trunc() {
        return Err(Error::DimensionMismatch {
            expected: state.trunc(),
            got: weights.len(),
        });
    }
    let d = test.ncols() as f64;
    let comps: Vec<(f64, Vec<f64>, f64)> = state
        .components
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, &w)| {
            let tau = c.prec_factor.mean();
            (w.ln() + 0.5 * d * (tau.ln() - LN_2PI), c.mean(), tau)
        })
        .collect();
    let mut total = 0.0;
    let mut buf = vec![0.0; comps.len()];
    for x in test.axis_iter(Axis(0)) {
        for (slot, (base, m, tau)) in buf.iter_mut().zip(&comps) {
            let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            *slot = base - 0.5 * tau * sq;
        }
        total += log_sum_exp(&buf);
    }
    Ok(total / test.nrows() as f64)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn near_deterministic(mean: f64) -> ComponentPosterior {
        ComponentPosterior::new(
            GaussianMeanFactor::from_mean(&[mean], 1e12).unwrap(),
            GammaFactor::new(1e12, 1e12).unwrap(),
        )
    }

    fn random_phi(n: usize, t: usize, seed: u64) -> Responsibilities {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = Array2::<f64>::zeros((n, t));
        phi.mapv_inplace(|_| rng.random::<f64>() + 0.05);
        Responsibilities::from_unnormalized(phi)
    }

    #[test]
    fn counts_for_deterministic_and_split_rows() {
        let mut phi = Array2::<f64>::zeros((5, 4));
        phi.column_mut(0).fill(1.0);
        let c = compute_counts(&Responsibilities::new(phi).unwrap());
        assert_eq!(c.e_nk, vec![5.0, 0.0, 0.0, 0.0]);
        assert!(c.v_nk.iter().all(|&v| v == 0.0));

        let phi = Responsibilities::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let c = compute_counts(&phi);
        assert_eq!(c.e_nk, vec![1.0, 1.0]);
        assert_eq!(c.v_nk, vec![0.5, 0.5]);
        assert_eq!(c.e_gt, vec![1.0, 0.0]);
    }

    #[test]
    fn responsibilities_validation() {
        assert!(Responsibilities::new(array![[0.5, 0.4]]).is_err());
        assert!(Responsibilities::new(array![[1.5, -0.5]]).is_err());
        assert!(Responsibilities::new(array![[0.25, 0.75]]).is_ok());
    }

    #[test]
    fn assignment_prior_for_empty_counts() {
        let c = CountStats::zeros(3);
        let v0 = expected_log_assignment_prior(&c, 2.0, 0);
        assert!((v0 - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        let v1 = expected_log_assignment_prior(&c, 2.0, 1);
        assert!((v1 - ((2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-15);
        // truncated prior sums to one
        let total: f64 = (0..3)
            .map(|k| expected_log_assignment_prior(&c, 2.0, k).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn row_prior_matches_scalar_prior() {
        let phi = random_phi(7, 5, 3);
        let counts = compute_counts(&phi);
        let loo = counts.without_point(phi.row(2));
        let mut row = vec![0.0; 5];
        assignment_prior_row(&loo, 1.3, &mut row);
        for (k, v) in row.iter().enumerate() {
            assert!((v - expected_log_assignment_prior(&loo, 1.3, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn leave_one_out_clamps_at_zero() {
        let phi = Responsibilities::new(array![[1.0, 0.0]]).unwrap();
        let c = compute_counts(&phi).without_point(phi.row(0));
        assert_eq!(c, CountStats::zeros(2));
    }

    #[test]
    fn expected_log_lik_deterministic_limit() {
        let c = near_deterministic(0.0);
        let half_ln_2pi = 0.5 * LN_2PI;
        assert!((expected_log_lik(array![0.0].view(), &c) + half_ln_2pi).abs() < 1e-9);
        assert!((expected_log_lik(array![1.0].view(), &c) + half_ln_2pi + 0.5).abs() < 1e-9);
    }

    #[test]
    fn global_update_hand_example() {
        let data = array![[2.0]];
        let phi = Responsibilities::new(array![[1.0, 0.0]]).unwrap();
        let prior = MixtureState::replicated(&ComponentPosterior::standard(1), 2);
        let out = update_global(data.view(), &phi, &prior, &prior).unwrap();
        let c = &out.components[0];
        assert_eq!(c.mean_factor.s, 2.0);
        assert_eq!(c.mean_factor.h, vec![2.0]);
        assert_eq!(c.prec_factor.a, 1.5);
        assert_eq!(c.prec_factor.b, 1.75);
        // no evidence for slot 1
        assert_eq!(out.components[1], prior.components[1]);
    }

    #[test]
    fn global_update_rejects_non_finite() {
        let data = array![[f64::NAN]];
        let phi = Responsibilities::new(array![[1.0, 0.0]]).unwrap();
        let prior = MixtureState::replicated(&ComponentPosterior::standard(1), 2);
        assert!(matches!(
            update_global(data.view(), &phi, &prior, &prior),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn local_update_identical_components_follow_prior_order() {
        let data = array![[0.3], [-0.2], [1.0]];
        let state = MixtureState::replicated(&ComponentPosterior::standard(1), 3);
        let phi = random_phi(3, 3, 1);
        let out = update_local(data.view(), &state, &phi, 2.0);
        let counts = compute_counts(&phi);
        for n in 0..3 {
            let loo = counts.without_point(phi.row(n));
            let p: Vec<f64> = (0..3)
                .map(|k| expected_log_assignment_prior(&loo, 2.0, k))
                .collect();
            for a in 0..3 {
                for b in 0..3 {
                    if p[a] > p[b] {
                        assert!(out.row(n)[a] > out.row(n)[b]);
                    }
                }
            }
        }
    }

    #[test]
    fn local_update_dominant_likelihood_and_row_sums() {
        let mut comps = vec![near_deterministic(0.0)];
        for m in [50.0, -50.0] {
            comps.push(near_deterministic(m));
        }
        let state = MixtureState { components: comps };
        let data = array![[0.1], [0.0]];
        let phi = random_phi(2, 3, 9);
        let out = update_local(data.view(), &state, &phi, 2.0);
        assert!(out.row(0)[0] > 0.99);
        for n in 0..2 {
            assert!((out.row(n).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_weights_geometric_for_zero_counts() {
        let w = expected_mixture_weights(&CountStats::zeros(4), 1.0);
        assert_eq!(w.weights, vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(w.remainder, 0.0625);
        let norm: f64 = w.normalized().iter().sum();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixture_weights_hand_example() {
        // 4 points split 2/2 over slots 0 and 1 of T = 3, alpha = 2
        let mut phi = Array2::<f64>::zeros((4, 3));
        phi[[0, 0]] = 1.0;
        phi[[1, 0]] = 1.0;
        phi[[2, 1]] = 1.0;
        phi[[3, 1]] = 1.0;
        let counts = compute_counts(&Responsibilities::new(phi).unwrap());
        let w = expected_mixture_weights(&counts, 2.0);
        // beta_0 = 3/7, beta_1 = 3/5, beta_2 = 1/3
        let expect = [
            3.0 / 7.0,
            4.0 / 7.0 * 3.0 / 5.0,
            4.0 / 7.0 * 2.0 / 5.0 / 3.0,
        ];
        for (a, b) in w.weights.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w.remainder - 4.0 / 7.0 * 2.0 / 5.0 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mixture_weights_concentrate_with_data() {
        let mut counts = CountStats::zeros(3);
        counts.e_nk[0] = 1e9;
        let w = expected_mixture_weights(&counts, 2.0);
        assert!(w.weights[0] > 1.0 - 1e-8);
    }

    #[test]
    fn predictive_single_component_weights() {
        let a = ComponentPosterior::new(
            GaussianMeanFactor::from_mean(&[0.5], 4.0).unwrap(),
            GammaFactor::new(3.0, 2.0).unwrap(),
        );
        let state = MixtureState {
            components: vec![a, ComponentPosterior::standard(1)],
        };
        let test = array![[0.0], [1.3]];
        let got = predictive_log_lik(test.view(), &state, &[1.0, 0.0]).unwrap();
        let tau: f64 = 1.5;
        let direct = [0.0f64, 1.3]
            .iter()
            .map(|x| 0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * (x - 0.5) * (x - 0.5))
            .sum::<f64>()
            / 2.0;
        assert!((got - direct).abs() < 1e-14);
        assert!(
            predictive_log_lik(Array2::<f64>::zeros((0, 1)).view(), &state, &[1.0, 0.0]).is_err()
        );
    }

    #[test]
    fn init_strategies_produce_valid_rows() {
        let data = array![[0.0, 0.0], [5.0, 5.0], [5.1, 4.9], [-3.0, 2.0]];
        let state = MixtureState::replicated(&ComponentPosterior::standard(2), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in [
            InitStrategy::Random,
            InitStrategy::NearestMean,
            InitStrategy::Warm,
            InitStrategy::Seeded,
            InitStrategy::Auto,
        ] {
            let phi = init_responsibilities(data.view(), &state, 2.0, s, &mut rng);
            assert!(Responsibilities::new(phi.as_array().clone()).is_ok());
        }
    }

    #[test]
    fn csv_dump_is_row_major() {
        let phi = Responsibilities::new(array![[0.25, 0.75], [1.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0.25,0.75\n1,0\n");
    }
}
