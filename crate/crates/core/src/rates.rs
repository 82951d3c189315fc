//! Monte Carlo moments, MSE and ergodic rate bounds.
//!
//! Moments are stored without the power scaling, i.e. `E[h_j^H v_k]` and
//! `E|h_j^H v_k|^2`, so the same table serves any power vector.

use rayon::prelude::*;

use crate::beamform::{BeamformerSet, Policy};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, C64};
use crate::model::{CsiModel, Realization};
use crate::rng::purpose;
use crate::stats::{batch_of, effective_batches, require_samples, BatchAccumulator, DEFAULT_BATCHES};

/// Anything that maps a realization to beamformers for fixed powers.
pub trait Beamforming: Sync {
    fn powers(&self) -> &[f64];
    /// Per-AP multipliers of the weighted noise norm.
    fn multipliers(&self) -> &[f64];
    fn apply(&self, r: &Realization) -> Result<BeamformerSet>;
}

impl Beamforming for Policy {
    fn powers(&self) -> &[f64] {
        &self.p
    }

    fn multipliers(&self) -> &[f64] {
        &self.lambda
    }

    fn apply(&self, r: &Realization) -> Result<BeamformerSet> {
        self.beamformers(r)
    }
}

/// A closure-backed rule, mostly for alternative beamformers in tests.
pub struct FnBeamforming<F> {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rule: F,
}

impl<F> Beamforming for FnBeamforming<F>
where
    F: Fn(&Realization) -> Result<BeamformerSet> + Sync,
{
    fn powers(&self) -> &[f64] {
        &self.p
    }

    fn multipliers(&self) -> &[f64] {
        &self.lambda
    }

    fn apply(&self, r: &Realization) -> Result<BeamformerSet> {
        (self.rule)(r)
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub drop: u64,
    pub batches: usize,
    /// Also accumulate moments in estimate form (conditioning on the pilots).
    pub estimate_form: bool,
}

impl EvalConfig {
    pub fn new(samples: usize, seed: u64, drop: u64) -> Self {
        Self {
            samples,
            seed,
            drop,
            batches: DEFAULT_BATCHES,
            estimate_form: false,
        }
    }
}

/// Realization `s` of a drop; shared by every scheme evaluated on it.
pub fn evaluation_realization(model: &dyn CsiModel, cfg: &EvalConfig, s: usize) -> Realization {
    model.draw(cfg.seed, &[purpose::EVALUATION, cfg.drop, s as u64])
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    k: usize,
    l: usize,
    est: bool,
}

impl Layout {
    fn mean(&self, j: usize, k: usize) -> usize {
        2 * (j * self.k + k)
    }
    fn second(&self, j: usize, k: usize) -> usize {
        2 * self.k * self.k + j * self.k + k
    }
    fn ap_power(&self, k: usize, l: usize) -> usize {
        3 * self.k * self.k + k * self.l + l
    }
    fn coh(&self, k: usize) -> usize {
        3 * self.k * self.k + self.k * self.l + k
    }
    fn oer(&self, k: usize) -> usize {
        self.coh(self.k) + k
    }
    fn mean_est(&self, j: usize, k: usize) -> usize {
        self.oer(self.k) + 2 * (j * self.k + k)
    }
    fn second_est(&self, j: usize, k: usize) -> usize {
        self.oer(self.k) + 2 * self.k * self.k + j * self.k + k
    }
    fn dim(&self) -> usize {
        if self.est {
            self.second_est(self.k, 0)
        } else {
            self.oer(self.k)
        }
    }
}

/// Monte Carlo moment table of one beamforming rule on one drop.
#[derive(Debug, Clone)]
pub struct MomentSet {
    layout: Layout,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    acc: BatchAccumulator,
    mean: Vec<f64>,
}

fn log2p1(x: f64) -> f64 {
    (1.0 + x).log2()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn sample_values(
    bf: &BeamformerSet,
    r: &Realization,
    model: &dyn CsiModel,
    p: &[f64],
    psi: &[crate::linalg::CMat],
    lay: Layout,
    out: &mut [f64],
) {
    let k_users = lay.k;
    for k in 0..k_users {
        let g = bf.gains(r, k, false);
        for j in 0..k_users {
            out[lay.mean(j, k)] = g[j].re;
            out[lay.mean(j, k) + 1] = g[j].im;
            out[lay.second(j, k)] = g[j].norm_sqr();
        }
        let mut noise = 0.0;
        let mut psi_term = 0.0;
        for l in 0..lay.l {
            out[lay.ap_power(k, l)] = 0.0;
        }
        for (l, v) in &bf.blocks[k] {
            let e = v.norm_squared();
            out[lay.ap_power(k, *l)] = e;
            noise += e;
            psi_term += quad_form(&psi[*l], v);
        }
        let interference: f64 = (0..k_users)
            .filter(|&j| j != k)
            .map(|j| p[j] * g[j].norm_sqr())
            .sum();
        out[lay.oer(k)] = log2p1(ratio(p[k] * g[k].norm_sqr(), interference + noise));

        let gh = bf.gains(r, k, true);
        let inter_h: f64 = (0..k_users)
            .filter(|&j| j != k)
            .map(|j| p[j] * gh[j].norm_sqr())
            .sum();
        out[lay.coh(k)] = log2p1(ratio(p[k] * gh[k].norm_sqr(), inter_h + psi_term + noise));

        if lay.est {
            for j in 0..k_users {
                let err: f64 = bf.blocks[k]
                    .iter()
                    .map(|(l, v)| quad_form(model.err_cov(*l, j), v))
                    .sum();
                out[lay.mean_est(j, k)] = gh[j].re;
                out[lay.mean_est(j, k) + 1] = gh[j].im;
                out[lay.second_est(j, k)] = gh[j].norm_sqr() + err;
            }
        }
    }
}

/// Averages `g_jk`, `|g_jk|^2` and beamformer powers over i.i.d.
/// realizations, recomputing the beamformers on each. Batches run in
/// parallel; the reduction order is fixed.
pub fn estimate_moments(
    rule: &dyn Beamforming,
    model: &dyn CsiModel,
    cfg: &EvalConfig,
) -> Result<MomentSet> {
    Ok(estimate_moments_many(&[rule], model, cfg)?.pop().unwrap())
}

/// Moments of several rules on the same realizations.
pub fn estimate_moments_many(
    rules: &[&dyn Beamforming],
    model: &dyn CsiModel,
    cfg: &EvalConfig,
) -> Result<Vec<MomentSet>> {
    require_samples(cfg.samples, 2, "moment estimation")?;
    let lay = Layout {
        k: model.num_users(),
        l: model.num_aps(),
        est: cfg.estimate_form,
    };
    let mut psi = Vec::with_capacity(rules.len());
    for rule in rules {
        if rule.powers().len() != lay.k {
            return Err(Error::Dimension("power vector does not match the user count".into()));
        }
        psi.push((0..lay.l).map(|l| model.psi(l, rule.powers())).collect::<Vec<_>>());
    }
    let batches = effective_batches(cfg.samples, cfg.batches);
    let n = cfg.samples;
    let dim = lay.dim();
    let sums: Vec<Result<(Vec<Vec<f64>>, usize)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut sum = vec![vec![0.0; dim]; rules.len()];
            let mut buf = vec![0.0; dim];
            let mut count = 0;
            let start = (b * n).div_ceil(batches);
            let end = ((b + 1) * n).div_ceil(batches);
            for s in start..end {
                debug_assert_eq!(batch_of(s, n, batches), b);
                let r = evaluation_realization(model, cfg, s);
                for (i, rule) in rules.iter().enumerate() {
                    let bf = rule.apply(&r)?;
                    sample_values(&bf, &r, model, rule.powers(), &psi[i], lay, &mut buf);
                    for (a, v) in sum[i].iter_mut().zip(&buf) {
                        *a += v;
                    }
                }
                count += 1;
            }
            Ok((sum, count))
        })
        .collect();
    let mut accs: Vec<BatchAccumulator> = (0..rules.len()).map(|_| BatchAccumulator::new(dim, batches)).collect();
    for (b, s) in sums.into_iter().enumerate() {
        let (sum, count) = s?;
        for (acc, su) in accs.iter_mut().zip(&sum) {
            acc.add_batch_sums(b, su, count);
        }
    }
    Ok(rules
        .iter()
        .zip(accs)
        .map(|(rule, acc)| MomentSet {
            layout: lay,
            p: rule.powers().to_vec(),
            lambda: rule.multipliers().to_vec(),
            mean: acc.mean(),
            acc,
        })
        .collect())
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl MomentSet {
    pub fn num_users(&self) -> usize {
        self.layout.k
    }

    pub fn num_aps(&self) -> usize {
        self.layout.l
    }

    pub fn samples(&self) -> usize {
        self.acc.count()
    }

    /// `E[h_j^H v_k]`.
    pub fn mean_inner(&self, j: usize, k: usize) -> C64 {
        let i = self.layout.mean(j, k);
        C64::new(self.mean[i], self.mean[i + 1])
    }

    /// `E|h_j^H v_k|^2`.
    pub fn second_inner(&self, j: usize, k: usize) -> f64 {
        self.mean[self.layout.second(j, k)]
    }

    /// `E[g_jk] = sqrt(p_j) E[h_j^H v_k]`.
    pub fn mean_g(&self, j: usize, k: usize) -> C64 {
        self.mean_inner(j, k) * self.p[j].sqrt()
    }

    pub fn second_g(&self, j: usize, k: usize) -> f64 {
        self.p[j] * self.second_inner(j, k)
    }

    /// `E|v_lk|^2`.
    pub fn ap_power(&self, k: usize, l: usize) -> f64 {
        self.mean[self.layout.ap_power(k, l)]
    }

    /// `E|v_k|^2`.
    pub fn power(&self, k: usize) -> f64 {
        (0..self.layout.l).map(|l| self.ap_power(k, l)).sum()
    }

    /// `E|v_k|^2` weighted by `1 + lambda_l`.
    pub fn power_v(&self, k: usize) -> f64 {
        self.weighted_power(k, &self.lambda)
    }

    pub fn weighted_power(&self, k: usize, lambda: &[f64]) -> f64 {
        (0..self.layout.l)
            .map(|l| (1.0 + lambda.get(l).copied().unwrap_or(0.0)) * self.ap_power(k, l))
            .sum()
    }

    /// Estimate-form `E[hhat_j^H v_k]`, when accumulated.
    pub fn mean_inner_est(&self, j: usize, k: usize) -> Option<C64> {
        self.layout.est.then(|| {
            let i = self.layout.mean_est(j, k);
            C64::new(self.mean[i], self.mean[i + 1])
        })
    }

    /// Estimate-form `E[|hhat_j^H v_k|^2 + v_k^H C_j v_k]`.
    pub fn second_inner_est(&self, j: usize, k: usize) -> Option<f64> {
        self.layout.est.then(|| self.mean[self.layout.second_est(j, k)])
    }

    fn view<'a>(&'a self, m: &'a [f64]) -> MomentView<'a> {
        MomentView { set: self, m }
    }

    fn jack<F: Fn(&MomentView) -> f64>(&self, f: F) -> Estimate {
        let (value, std_err) = self.acc.jackknife(|m| f(&self.view(m)));
        Estimate { value, std_err }
    }

    /// Standard error of a linear moment entry.
    pub fn second_inner_std_err(&self, j: usize, k: usize) -> f64 {
        self.acc.std_err()[self.layout.second(j, k)]
    }

    pub fn uatf_sinr(&self, k: usize) -> Estimate {
        self.jack(|v| v.uatf_sinr(k))
    }

    pub fn uatf_rate(&self, k: usize) -> Estimate {
        self.jack(|v| log2p1(v.uatf_sinr(k)))
    }

    pub fn mse(&self, k: usize) -> Estimate {
        self.jack(|v| v.mse(k))
    }

    /// `(1 + SINR) MSE - 1`, zero for MMSE beamformers.
    pub fn mmse_identity_gap(&self, k: usize) -> Estimate {
        self.jack(|v| (1.0 + v.uatf_sinr(k)) * v.mse(k) - 1.0)
    }

    pub fn coherent_rate(&self, k: usize) -> Estimate {
        self.jack(|v| v.m[self.layout.coh(k)])
    }

    pub fn optimistic_rate(&self, k: usize) -> Estimate {
        self.jack(|v| v.m[self.layout.oer(k)])
    }

    /// Jackknife estimate of an arbitrary smooth function of the moments.
    pub fn jackknife<F: Fn(&MomentView) -> f64>(&self, f: F) -> Estimate {
        self.jack(f)
    }

    pub fn report(&self) -> RateReport {
        let users = (0..self.num_users())
            .map(|k| UserRates {
                mse: self.mse(k),
                sinr_uatf: self.uatf_sinr(k),
                rate_uatf: self.uatf_rate(k),
                rate_coh: self.coherent_rate(k),
                rate_oer: self.optimistic_rate(k),
            })
            .collect();
        RateReport {
            users,
            samples: self.samples(),
        }
    }
}

/// Moment table evaluated at an arbitrary mean vector (full sample or a
/// jackknife replicate).
pub struct MomentView<'a> {
    set: &'a MomentSet,
    m: &'a [f64],
}

impl MomentView<'_> {
    pub fn mean_inner(&self, j: usize, k: usize) -> C64 {
        let i = self.set.layout.mean(j, k);
        C64::new(self.m[i], self.m[i + 1])
    }

    pub fn second_inner(&self, j: usize, k: usize) -> f64 {
        self.m[self.set.layout.second(j, k)]
    }

    pub fn power_v(&self, k: usize) -> f64 {
        (0..self.set.layout.l)
            .map(|l| {
                (1.0 + self.set.lambda.get(l).copied().unwrap_or(0.0))
                    * self.m[self.set.layout.ap_power(k, l)]
            })
            .sum()
    }

    pub fn uatf_sinr(&self, k: usize) -> f64 {
        let p = &self.set.p;
        let signal = p[k] * self.mean_inner(k, k).norm_sqr();
        let total: f64 = (0..p.len()).map(|j| p[j] * self.second_inner(j, k)).sum();
        ratio(signal, total - signal + self.power_v(k))
    }

    pub fn mse(&self, k: usize) -> f64 {
        let p = &self.set.p;
        let total: f64 = (0..p.len()).map(|j| p[j] * self.second_inner(j, k)).sum();
        total + self.power_v(k) - 2.0 * p[k].sqrt() * self.mean_inner(k, k).re + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRates {
    pub mse: Estimate,
    pub sinr_uatf: Estimate,
    pub rate_uatf: Estimate,
    pub rate_coh: Estimate,
    pub rate_oer: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub users: Vec<UserRates>,
    pub samples: usize,
}

/// `sqrt(a^2 + b^2)` for combining independent standard errors.
pub fn combined_std_err(a: f64, b: f64) -> f64 {
    a.hypot(b)
}
