//! Streaming inference over a sequence of batches: SVB, power priors with a
//! fixed forgetting weight (PP), hierarchical power priors with one learned
//! weight (HPP) or one per component (MHPP), plus the SVI, batch-VI and
//! privileged-reset baselines.
//!
//! The forgetting weight `rho` has a truncated-exponential variational
//! posterior on `[0, 1]` with density proportional to `exp(omega * rho)`.

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dpm::{
    compute_counts, init_responsibilities, is_uninformative, surrogate_elbo, update_global,
    update_local, InitStrategy, MixtureState, ModelConfig, Responsibilities,
};
use crate::error::{Error, Result};
use crate::expfam::{kl_component, mix_natural, ComponentPosterior};
use crate::stream::StreamBatch;

pub const OMEGA_CLIP: f64 = 100.0;
pub const E_RHO_CLIP: f64 = 1e-6;
pub const DEFAULT_GAMMA: f64 = 0.1;
/// Step-halving attempts before a local sweep that lowers the objective is rejected.
const MAX_BACKTRACK: usize = 12;

/// `E[rho]` under the truncated exponential with natural parameter `omega`.
pub fn expected_rho(omega: f64) -> f64 {
    if omega.abs() < 1e-4 {
        let w2 = omega * omega;
        return 0.5 + omega / 12.0 - omega * w2 / 720.0;
    }
    1.0 / (-(-omega).exp_m1()) - 1.0 / omega
}

/// `ln of the integral of exp(omega * rho)` over `[0, 1]`.
pub fn log_trunc_exp_normalizer(omega: f64) -> f64 {
    if omega.abs() < 1e-4 {
        return omega / 2.0 + omega * omega / 24.0;
    }
    if omega > 0.0 {
        omega + (-(-omega).exp_m1()).ln() - omega.ln()
    } else {
        (-omega.exp_m1()).ln() - (-omega).ln()
    }
}

/// Forgetting weights in effect for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingState {
    /// Length 1 for HPP, `T` for MHPP, empty otherwise.
    pub omegas: Vec<f64>,
    pub e_rho: Vec<f64>,
    pub gamma: f64,
    /// Set for algorithms whose weight is not learned.
    pub fixed_rho: Option<f64>,
}

impl ForgettingState {
    pub fn fixed(rho: f64) -> Self {
        Self {
            omegas: Vec::new(),
            e_rho: Vec::new(),
            gamma: DEFAULT_GAMMA,
            fixed_rho: Some(rho),
        }
    }

    /// Learned weights, starting from `omega = 0` (`E[rho] = 1/2`).
    pub fn learned(n: usize, gamma: f64) -> Self {
        Self {
            omegas: vec![0.0; n],
            e_rho: vec![0.5; n],
            gamma,
            fixed_rho: None,
        }
    }

    /// Weight used for component `k`.
    pub fn e_rho_for(&self, k: usize) -> f64 {
        match self.fixed_rho {
            Some(r) => r,
            None if self.e_rho.len() == 1 => self.e_rho[0],
            None => self.e_rho[k],
        }
    }

    pub fn e_rho_mean(&self) -> Option<f64> {
        if self.fixed_rho.is_some() || self.e_rho.is_empty() {
            return None;
        }
        Some(self.e_rho.iter().sum::<f64>() / self.e_rho.len() as f64)
    }

    fn set_omega(&mut self, i: usize, omega: f64) {
        let w = omega.clamp(-OMEGA_CLIP, OMEGA_CLIP);
        self.omegas[i] = w;
        self.e_rho[i] = expected_rho(w).clamp(E_RHO_CLIP, 1.0 - E_RHO_CLIP);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviParams {
    #[serde(default = "default_svi_exponent")]
    pub forgetting_exponent: f64,
    #[serde(default = "default_svi_delay")]
    pub delay: f64,
    /// Dataset size used to scale batch statistics; `None` means the batch size.
    #[serde(default)]
    pub dataset_size_surrogate: Option<f64>,
}

fn default_svi_exponent() -> f64 {
    0.55
}
fn default_svi_delay() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl Default for SviParams {
    fn default() -> Self {
        Self {
            forgetting_exponent: default_svi_exponent(),
            delay: default_svi_delay(),
            dataset_size_surrogate: None,
        }
    }
}

impl SviParams {
    pub fn step_size(&self, t: usize) -> f64 {
        (t as f64 + self.delay).powf(-self.forgetting_exponent)
    }
}

/// Which streaming algorithm to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AlgorithmSpec {
    #[serde(rename = "SVB")]
    Svb,
    #[serde(rename = "PP")]
    Pp {
        fixed_rho: f64,
    },
    #[serde(rename = "HPP")]
    Hpp {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    #[serde(rename = "MHPP")]
    Mhpp {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    #[serde(rename = "SVI")]
    Svi(SviParams),
    Privileged,
    #[serde(rename = "BatchVI")]
    BatchVi,
}

impl AlgorithmSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlgorithmSpec::Pp { fixed_rho } if !(0.0..=1.0).contains(&fixed_rho) => {
                Err(Error::config("fixed_rho", "must lie in [0, 1]"))
            }
            AlgorithmSpec::Hpp { gamma } | AlgorithmSpec::Mhpp { gamma } if !gamma.is_finite() => {
                Err(Error::config("gamma", "must be finite"))
            }
            AlgorithmSpec::Svi(p) => {
                if !(p.forgetting_exponent > 0.5 && p.forgetting_exponent <= 1.0) {
                    return Err(Error::config("forgetting_exponent", "must lie in (0.5, 1]"));
                }
                if !(p.delay >= 0.0) {
                    return Err(Error::config("delay", "must be non-negative"));
                }
                if matches!(p.dataset_size_surrogate, Some(n) if !(n > 0.0)) {
                    return Err(Error::config("dataset_size_surrogate", "must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Short display name, e.g. `PP(0.9)`.
    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::Svb => "SVB".into(),
            AlgorithmSpec::Pp { fixed_rho } => format!("PP({fixed_rho})"),
            AlgorithmSpec::Hpp { .. } => "HPP".into(),
            AlgorithmSpec::Mhpp { .. } => "MHPP".into(),
            AlgorithmSpec::Svi(_) => "SVI".into(),
            AlgorithmSpec::Privileged => "Privileged".into(),
            AlgorithmSpec::BatchVi => "BatchVI".into(),
        }
    }

    fn initial_forgetting(&self, trunc: usize) -> ForgettingState {
        match *self {
            AlgorithmSpec::Svb | AlgorithmSpec::Privileged => ForgettingState::fixed(1.0),
            AlgorithmSpec::Pp { fixed_rho } => ForgettingState::fixed(fixed_rho),
            AlgorithmSpec::BatchVi | AlgorithmSpec::Svi(_) => ForgettingState::fixed(0.0),
            AlgorithmSpec::Hpp { gamma } => ForgettingState::learned(1, gamma),
            AlgorithmSpec::Mhpp { gamma } => ForgettingState::learned(trunc, gamma),
        }
    }
}

fn check_same_shape(a: &MixtureState, b: &MixtureState) -> Result<()> {
    if a.trunc() != b.trunc() {
        return Err(Error::DimensionMismatch {
            expected: a.trunc(),
            got: b.trunc(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn omega_term(
    q: &ComponentPosterior,
    prev: &ComponentPosterior,
    prior0: &ComponentPosterior,
) -> Result<f64> {
    Ok(kl_component(q, prior0)? - kl_component(q, prev)?)
}

/// Optimal shared `omega` for HPP.
pub fn update_omega_hpp(
    state: &MixtureState,
    prev: &MixtureState,
    prior0: &ComponentPosterior,
    gamma: f64,
) -> Result<f64> {
    check_same_shape(state, prev)?;
    let mut acc = gamma;
    for (q, p) in state.components.iter().zip(&prev.components) {
        acc += omega_term(q, p, prior0)?;
    }
    Ok(acc)
}

/// Optimal `omega_k` for component `k` under MHPP.
pub fn update_omega_mhpp(
    state: &MixtureState,
    prev: &MixtureState,
    prior0: &ComponentPosterior,
    gamma: f64,
    k: usize,
) -> Result<f64> {
    check_same_shape(state, prev)?;
    if k >= state.trunc() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: state.trunc(),
        });
    }
    Ok(omega_term(&state.components[k], &prev.components[k], prior0)? + gamma)
}

/// SVI natural-gradient step `(1 - r_t) prev + r_t batch_optimum`.
pub fn svi_step(
    prev: &MixtureState,
    batch_optimum: &MixtureState,
    t: usize,
    params: &SviParams,
) -> Result<MixtureState> {
    if t == 0 {
        return Err(Error::Domain("SVI step index starts at 1".into()));
    }
    check_same_shape(prev, batch_optimum)?;
    let r = params.step_size(t);
    let components = batch_optimum
        .components
        .iter()
        .zip(&prev.components)
        .map(|(opt, p)| mix_natural(opt, p, r))
        .collect::<Result<_>>()?;
    Ok(MixtureState { components })
}

/// Result of fitting one batch.
#[derive(Debug, Clone)]
pub struct BatchFit {
    pub state: MixtureState,
    pub phi: Responsibilities,
    pub forgetting: ForgettingState,
    /// Objective at initialization followed by one value per iteration.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl BatchFit {
    pub fn iterations(&self) -> usize {
        self.elbo_trace.len().saturating_sub(1)
    }

    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("trace starts non-empty")
    }
}

fn mixed_prior(
    prev: &MixtureState,
    prior0: &ComponentPosterior,
    f: &ForgettingState,
) -> Result<MixtureState> {
    let components = prev
        .components
        .iter()
        .enumerate()
        .map(|(k, p)| mix_natural(p, prior0, f.e_rho_for(k)))
        .collect::<Result<_>>()?;
    Ok(MixtureState { components })
}

/// Local sweep that never lowers the objective: if the full parallel
/// update does, move part of the way towards it, halving the step.
#[allow(clippy::too_many_arguments)]
fn monotone_local_step(
    data: ArrayView2<f64>,
    state: &MixtureState,
    phi: Responsibilities,
    prev: &MixtureState,
    config: &ModelConfig,
    forgetting: &ForgettingState,
    before: f64,
) -> Result<(Responsibilities, f64)> {
    let proposal = update_local(data, state, &phi, config.alpha);
    let elbo = |p: &Responsibilities| {
        surrogate_elbo(
            data,
            state,
            p,
            prev,
            &config.prior,
            forgetting,
            config.alpha,
        )
    };
    let value = elbo(&proposal)?;
    if value >= before {
        return Ok((proposal, value));
    }
    let mut step = 0.5;
    for _ in 0..MAX_BACKTRACK {
        let blended = phi.as_array() * (1.0 - step) + proposal.as_array() * step;
        let candidate = Responsibilities::from_unnormalized(blended);
        let value = elbo(&candidate)?;
        if value >= before {
            return Ok((candidate, value));
        }
        step *= 0.5;
    }
    Ok((phi, before))
}

/// Fit one batch given the previous posterior.
///
/// `t` is the 1-based position of the batch in the stream; only SVI uses it.
pub fn fit_batch(
    algorithm: &AlgorithmSpec,
    data: ArrayView2<f64>,
    prev_state: &MixtureState,
    config: &ModelConfig,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchFit> {
    algorithm.validate()?;
    config.validate()?;
    if data.ncols() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            got: data.ncols(),
        });
    }
    if data.nrows() == 0 {
        return Err(Error::Empty("training batch".into()));
    }
    if prev_state.trunc() != config.trunc || prev_state.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.trunc * config.dim,
            got: prev_state.trunc() * prev_state.dim(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    // a posterior carried with zero weight must not leak in through initialization
    let discard_prev = match *algorithm {
        AlgorithmSpec::BatchVi => true,
        AlgorithmSpec::Pp { fixed_rho } => fixed_rho == 0.0,
        _ => false,
    };
    let fresh;
    let prev_state = if discard_prev {
        fresh = config.prior_state();
        &fresh
    } else {
        prev_state
    };

    let fit = match config.init {
        InitStrategy::Auto => {
            let warm =
                coordinate_ascent(algorithm, data, prev_state, config, InitStrategy::Warm, rng)?;
            if is_uninformative(prev_state) {
                warm
            } else {
                let seeded = coordinate_ascent(
                    algorithm,
                    data,
                    prev_state,
                    config,
                    InitStrategy::Seeded,
                    rng,
                )?;
                if seeded.final_elbo() > warm.final_elbo() {
                    seeded
                } else {
                    warm
                }
            }
        }
        init => coordinate_ascent(algorithm, data, prev_state, config, init, rng)?,
    };
    match algorithm {
        AlgorithmSpec::Svi(params) => {
            let optimum = match params.dataset_size_surrogate {
                Some(n) => scale_statistics(&fit.state, &config.prior, n / data.nrows() as f64)?,
                None => fit.state.clone(),
            };
            Ok(BatchFit {
                state: svi_step(prev_state, &optimum, t.max(1), params)?,
                ..fit
            })
        }
        _ => Ok(fit),
    }
}

/// `prior + scale * (state - prior)` in natural parameters.
fn scale_statistics(
    state: &MixtureState,
    prior0: &ComponentPosterior,
    scale: f64,
) -> Result<MixtureState> {
    let components = state
        .components
        .iter()
        .map(|c| {
            let mut out = c.clone();
            for (h, h0) in out.mean_factor.h.iter_mut().zip(&prior0.mean_factor.h) {
                *h = h0 + scale * (*h - h0);
            }
            out.mean_factor.s =
                prior0.mean_factor.s + scale * (c.mean_factor.s - prior0.mean_factor.s);
            out.prec_factor.a =
                prior0.prec_factor.a + scale * (c.prec_factor.a - prior0.prec_factor.a);
            out.prec_factor.b =
                prior0.prec_factor.b + scale * (c.prec_factor.b - prior0.prec_factor.b);
            if out.is_finite()
                && out.mean_factor.s > 0.0
                && out.prec_factor.a > 0.0
                && out.prec_factor.b > 0.0
            {
                Ok(out)
            } else {
                Err(Error::Domain(
                    "scaled SVI statistics left the parameter domain".into(),
                ))
            }
        })
        .collect::<Result<_>>()?;
    Ok(MixtureState { components })
}

fn coordinate_ascent(
    algorithm: &AlgorithmSpec,
    data: ArrayView2<f64>,
    prev: &MixtureState,
    config: &ModelConfig,
    init: InitStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<BatchFit> {
    let prior0 = &config.prior;
    let mut forgetting = algorithm.initial_forgetting(config.trunc);
    let mut state = prev.clone();
    let mut phi = init_responsibilities(data, &state, config.alpha, init, rng);
    let mut trace = vec![surrogate_elbo(
        data,
        &state,
        &phi,
        prev,
        prior0,
        &forgetting,
        config.alpha,
    )?];
    let mut converged = false;

    for _ in 0..config.max_iters {
        let prior = mixed_prior(prev, prior0, &forgetting)?;
        state = update_global(data, &phi, &prior, &state)?;
        let after_global =
            surrogate_elbo(data, &state, &phi, prev, prior0, &forgetting, config.alpha)?;
        let (new_phi, mut value) =
            monotone_local_step(data, &state, phi, prev, config, &forgetting, after_global)?;
        phi = new_phi;

        match *algorithm {
            AlgorithmSpec::Hpp { gamma } => {
                let w = update_omega_hpp(&state, prev, prior0, gamma)?;
                forgetting.set_omega(0, w);
            }
            AlgorithmSpec::Mhpp { gamma } => {
                for k in 0..config.trunc {
                    let w = update_omega_mhpp(&state, prev, prior0, gamma, k)?;
                    forgetting.set_omega(k, w);
                }
            }
            _ => {}
        }
        if forgetting.fixed_rho.is_none() {
            value = surrogate_elbo(data, &state, &phi, prev, prior0, &forgetting, config.alpha)?;
        }

        let last = *trace.last().expect("trace starts non-empty");
        trace.push(value);
        if ((value - last) / last.abs().max(f64::MIN_POSITIVE)).abs() < config.tol {
            converged = true;
            break;
        }
    }

    Ok(BatchFit {
        state,
        phi,
        forgetting,
        elbo_trace: trace,
        converged,
    })
}

/// Fit output for one batch of a stream.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub t: usize,
    pub fit: BatchFit,
    /// Whether the previous posterior was discarded before this batch.
    pub reset: bool,
}

/// Run `algorithm` over a stream, threading the posterior between batches.
///
/// `drift_flags` marks batches where the privileged baseline resets to the
/// prior; it is required for `Privileged` and ignored otherwise. `on_batch`
/// is invoked after each batch (metrics hooks).
pub fn fit_stream_with<F>(
    algorithm: &AlgorithmSpec,
    stream: &[StreamBatch],
    drift_flags: Option<&[bool]>,
    config: &ModelConfig,
    seed: u64,
    mut on_batch: F,
) -> Result<Vec<BatchRecord>>
where
    F: FnMut(&StreamBatch, &BatchRecord) -> Result<()>,
{
    if stream.is_empty() {
        return Err(Error::Empty("stream".into()));
    }
    let flags = match (algorithm, drift_flags) {
        (AlgorithmSpec::Privileged, None) => {
            return Err(Error::config(
                "algorithms",
                "Privileged needs ground-truth drift flags",
            ))
        }
        (_, Some(f)) if f.len() < stream.len() => {
            return Err(Error::config("drift_flags", "fewer flags than batches"))
        }
        (_, f) => f,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = config.prior_state();
    let mut records = Vec::with_capacity(stream.len());
    for (i, batch) in stream.iter().enumerate() {
        let reset = matches!(algorithm, AlgorithmSpec::Privileged) && flags.is_some_and(|f| f[i]);
        if reset {
            prev = config.prior_state();
        }
        let fit = fit_batch(
            algorithm,
            batch.train.view(),
            &prev,
            config,
            i + 1,
            &mut rng,
        )
        .map_err(|e| Error::Batch {
            batch: i,
            source: Box::new(e),
        })?;
        prev = fit.state.clone();
        let record = BatchRecord {
            t: batch.t,
            fit,
            reset,
        };
        on_batch(batch, &record)?;
        records.push(record);
    }
    Ok(records)
}

pub fn fit_stream(
    algorithm: &AlgorithmSpec,
    stream: &[StreamBatch],
    drift_flags: Option<&[bool]>,
    config: &ModelConfig,
    seed: u64,
) -> Result<Vec<BatchRecord>> {
    fit_stream_with(algorithm, stream, drift_flags, config, seed, |_, _| Ok(()))
}

/// Soft count of each slot under the fitted responsibilities.
pub fn occupancy(fit: &BatchFit) -> Vec<f64> {
    compute_counts(&fit.phi).e_nk
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{GammaFactor, GaussianMeanFactor};

    fn comp(m: &[f64], s: f64, a: f64, b: f64) -> ComponentPosterior {
        ComponentPosterior::new(
            GaussianMeanFactor::from_mean(m, s).unwrap(),
            GammaFactor::new(a, b).unwrap(),
        )
    }

    #[test]
    fn expected_rho_values() {
        assert_eq!(expected_rho(0.0), 0.5);
        let e1 = 1.0 / (1.0 - (-1f64).exp()) - 1.0;
        assert!((expected_rho(1.0) - e1).abs() < 1e-15);
        assert!((expected_rho(1.0) - 0.581_98).abs() < 1e-5);
        // at |omega| = 50 the exact tails differ from 0.02 / 0.98 by ~1e-22
        assert!(expected_rho(-50.0) <= 0.02);
        assert!(expected_rho(50.0) >= 0.98);
        assert!(expected_rho(-60.0) < 0.02);
        assert!(expected_rho(60.0) > 0.98);
        // series branch joins the closed form smoothly
        for w in [9.9e-5f64, 1.01e-4, -9.9e-5, -1.01e-4] {
            let closed = 1.0 / (-(-w).exp_m1()) - 1.0 / w;
            assert!((expected_rho(w) - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn normalizer_matches_direct_formula() {
        for w in [-30.0f64, -2.0, -1e-3, 1e-3, 0.5, 7.0, 80.0] {
            let direct = ((w.exp() - 1.0) / w).ln();
            assert!(
                (log_trunc_exp_normalizer(w) - direct).abs() < 1e-10,
                "w={w}"
            );
        }
        assert_eq!(log_trunc_exp_normalizer(0.0), 0.0);
    }

    #[test]
    fn omega_examples() {
        let prior0 = ComponentPosterior::standard(2);
        let far = comp(&[5.0, -3.0], 40.0, 30.0, 20.0);
        let t = 3;
        let p0 = MixtureState::replicated(&prior0, t);
        let far_state = MixtureState::replicated(&far, t);
        let gamma = 0.1;

        // prev = prior0
        let w = update_omega_hpp(&far_state, &p0, &prior0, gamma).unwrap();
        assert!((w - gamma).abs() < 1e-12);

        // q = prev, far from prior0
        let w = update_omega_hpp(&far_state, &far_state, &prior0, gamma).unwrap();
        let kl = kl_component(&far, &prior0).unwrap();
        assert!((w - (t as f64 * kl + gamma)).abs() < 1e-9);
        assert!(w > gamma);

        // q = prior0, prev far away
        let w = update_omega_hpp(&p0, &far_state, &prior0, gamma).unwrap();
        assert!(w < gamma);

        let wk = update_omega_mhpp(&p0, &far_state, &prior0, gamma, 1).unwrap();
        assert!(wk < gamma);
        let wk = update_omega_mhpp(&p0, &p0, &prior0, gamma, 2).unwrap();
        assert_eq!(wk, gamma);
        assert!(matches!(
            update_omega_mhpp(&p0, &p0, &prior0, gamma, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn mhpp_decomposes_hpp() {
        let prior0 = ComponentPosterior::standard(1);
        let state = MixtureState {
            components: vec![
                comp(&[1.0], 3.0, 2.0, 1.0),
                comp(&[-2.0], 5.0, 4.0, 3.0),
                prior0.clone(),
            ],
        };
        let prev = MixtureState {
            components: vec![
                comp(&[0.5], 2.0, 2.0, 2.0),
                prior0.clone(),
                comp(&[3.0], 9.0, 5.0, 1.0),
            ],
        };
        let gamma = 0.3;
        let hpp = update_omega_hpp(&state, &prev, &prior0, gamma).unwrap();
        let sum: f64 = (0..3)
            .map(|k| update_omega_mhpp(&state, &prev, &prior0, gamma, k).unwrap() - gamma)
            .sum();
        assert!((sum - (hpp - gamma)).abs() < 1e-12);
    }

    #[test]
    fn svi_schedule() {
        let p = SviParams::default();
        assert!((p.step_size(1) - 2f64.powf(-0.55)).abs() < 1e-15);
        assert!((p.step_size(1) - 0.683_02).abs() < 1e-5);
        assert!(p.step_size(1_000_000) < 1e-3);

        let unit = SviParams {
            forgetting_exponent: 1.0,
            delay: 0.0,
            dataset_size_surrogate: None,
        };
        let prev = MixtureState::replicated(&ComponentPosterior::standard(2), 2);
        let opt = MixtureState::replicated(&comp(&[1.0, 2.0], 3.0, 4.0, 5.0), 2);
        assert_eq!(svi_step(&prev, &opt, 1, &unit).unwrap(), opt);
        assert!(svi_step(&prev, &opt, 0, &unit).is_err());

        // constant target: iterates converge to it
        let mut cur = prev;
        for t in 1..=2000 {
            cur = svi_step(&cur, &opt, t, &p).unwrap();
        }
        let gap = (cur.components[0].mean_factor.s - 3.0).abs();
        assert!(gap < 1e-2, "gap {gap}");
    }

    #[test]
    fn algorithm_spec_json() {
        let specs: Vec<AlgorithmSpec> = serde_json::from_str(
            r#"[{"kind":"SVB"},{"kind":"PP","fixed_rho":0.9},{"kind":"MHPP"},
                {"kind":"SVI"},{"kind":"Privileged"},{"kind":"BatchVI"},{"kind":"HPP","gamma":1.0}]"#,
        )
        .unwrap();
        assert_eq!(specs[1], AlgorithmSpec::Pp { fixed_rho: 0.9 });
        assert_eq!(
            specs[2],
            AlgorithmSpec::Mhpp {
                gamma: DEFAULT_GAMMA
            }
        );
        assert_eq!(specs[3], AlgorithmSpec::Svi(SviParams::default()));
        assert_eq!(specs[1].label(), "PP(0.9)");
        assert!(AlgorithmSpec::Pp { fixed_rho: 1.2 }.validate().is_err());
        assert!(AlgorithmSpec::Svi(SviParams {
            forgetting_exponent: 0.5,
            ..SviParams::default()
        })
        .validate()
        .is_err());
    }
}
