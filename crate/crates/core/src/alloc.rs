//! Power control: fractional policies and max-min fixed-point solvers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::beamform::{BeamformerSet, Policy, TeamConfig};
use crate::duality::{build_coupling, solve_power_pair, CouplingMatrices};
use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::model::{CsiModel, Realization};
use crate::netgen::CsiRegime;
use crate::rates::{estimate_moments, EvalConfig, MomentSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    /// Per-user power limit.
    Max,
    /// Sum-power limit.
    Sum,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub samples: usize,
    pub pi_samples: usize,
    pub seed: u64,
    pub drop: u64,
    /// Initial log-step for the multiplicative update of `1 + lambda`.
    pub lambda_step: f64,
    pub max_lambda_iter: usize,
    pub bisection_tol: f64,
    pub max_bisection: usize,
    /// Relative per-AP power violation accepted by a probe.
    pub feasibility_tol: f64,
    /// Relative complementary slackness accepted by a probe.
    pub slackness_tol: f64,
    /// Feasibility updates solve the linear power system for the current
    /// beamformers instead of taking one interference-function step.
    pub linear_update: bool,
    /// Shared AP mask for the mixed regime; empty selects the default.
    pub shared: Vec<bool>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            samples: 2000,
            pi_samples: 2000,
            seed: 0,
            drop: 0,
            lambda_step: 1.0,
            max_lambda_iter: 300,
            bisection_tol: 1e-5,
            max_bisection: 60,
            feasibility_tol: 1e-6,
            slackness_tol: 5e-5,
            linear_update: true,
            shared: Vec::new(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be at least 1"));
        }
        if !(self.lambda_step > 0.0) {
            return Err(Error::config("lambda_step", "must be positive"));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::config("bisection_tol", "must be positive"));
        }
        Ok(())
    }

    fn team(&self, num_aps: usize) -> TeamConfig {
        let mut t = TeamConfig::new(self.pi_samples, self.seed, num_aps);
        if !self.shared.is_empty() {
            t.shared = self.shared.clone();
        }
        t
    }

    fn eval(&self) -> EvalConfig {
        EvalConfig::new(self.samples, self.seed, self.drop)
    }
}

/// One line of a solver trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub solver: &'static str,
    pub iteration: usize,
    pub min_sinr: f64,
    pub norm_p: f64,
}

/// Fractional power control from the aggregate cluster gains.
pub fn fractional_power(
    gains: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    max_power: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let inv: Vec<f64> = clusters
        .iter()
        .enumerate()
        .map(|(k, cl)| {
            let agg: f64 = cl.iter().map(|&l| gains[(l, k)]).sum();
            if agg > 0.0 && agg.is_finite() {
                Ok(1.0 / agg)
            } else {
                Err(Error::Domain(format!("user {k} has zero aggregate gain")))
            }
        })
        .collect::<Result<_>>()?;
    let k = inv.len() as f64;
    Ok(match direction {
        Direction::Uplink => {
            let m = inv.iter().copied().fold(0.0, f64::max);
            inv.iter().map(|x| x / m * max_power).collect()
        }
        Direction::Downlink => {
            let s: f64 = inv.iter().sum();
            inv.iter().map(|x| x / s * k * max_power).collect()
        }
    })
}

fn max_rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - b).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

fn normalize(t: &[f64], budget: f64, norm: Norm) -> Vec<f64> {
    let n = match norm {
        Norm::Max => t.iter().copied().fold(0.0, f64::max),
        Norm::Sum => t.iter().sum(),
    };
    t.iter().map(|x| budget * (x / n)).collect()
}

fn uatf_sinrs(m: &MomentSet) -> Vec<f64> {
    (0..m.num_users()).map(|k| m.uatf_sinr(k).value).collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct MaxMinResult {
    pub policy: Policy,
    pub moments: MomentSet,
    pub p: Vec<f64>,
    pub sinr: Vec<f64>,
    pub min_sinr: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Normalized fixed point `p <- P t / |t|` with `t_k = p_k / SINR_k`,
/// recomputing the MMSE beamformers of the regime at each step on frozen
/// Monte Carlo randomness.
pub fn maxmin_uatf(
    model: &dyn CsiModel,
    regime: CsiRegime,
    clusters: &[Vec<usize>],
    budget: f64,
    norm: Norm,
    opts: &SolverOptions,
) -> Result<MaxMinResult> {
    opts.validate()?;
    if !(budget > 0.0) {
        return Err(Error::Domain("power budget must be positive".into()));
    }
    let k = model.num_users();
    let team = opts.team(model.num_aps());
    let eval = opts.eval();
    let mut p = match norm {
        Norm::Max => vec![budget; k],
        Norm::Sum => vec![budget / k as f64; k],
    };
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let policy = Policy::prepare(regime, model, clusters, &p, &[], &team)?;
        let m = estimate_moments(&policy, model, &eval)?;
        let sinr = uatf_sinrs(&m);
        trace.push(TraceRow {
            solver: "maxmin_uatf",
            iteration: it,
            min_sinr: min_of(&sinr),
            norm_p: p.iter().copied().fold(0.0, f64::max),
        });
        if let Some(u) = sinr.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Domain(format!("user {u} has zero SINR, max-min value is 0")));
        }
        let t: Vec<f64> = p.iter().zip(&sinr).map(|(pk, s)| pk / s).collect();
        let next = normalize(&t, budget, norm);
        last_change = max_rel_change(&p, &next);
        p = next;
        if last_change < opts.tol {
            let policy = Policy::prepare(regime, model, clusters, &p, &[], &team)?;
            let moments = estimate_moments(&policy, model, &eval)?;
            let sinr = uatf_sinrs(&moments);
            return Ok(MaxMinResult {
                min_sinr: min_of(&sinr),
                policy,
                moments,
                p,
                sinr,
                iterations: it + 1,
                trace,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change,
        last_iterate: p,
        realization: None,
    })
}

/// Per-realization coherent SINRs given the pilot observations.
pub fn coherent_sinr(bf: &BeamformerSet, r: &Realization, model: &dyn CsiModel, p: &[f64]) -> Vec<f64> {
    let psi: Vec<_> = (0..model.num_aps()).map(|l| model.psi(l, p)).collect();
    (0..bf.num_users())
        .map(|k| {
            let g = bf.gains(r, k, true);
            let noise: f64 = bf.blocks[k]
                .iter()
                .map(|(l, v)| quad_form(&psi[*l], v) + v.norm_squared())
                .sum();
            let inter: f64 = (0..p.len()).filter(|&j| j != k).map(|j| p[j] * g[j].norm_sqr()).sum();
            let sig = p[k] * g[k].norm_sqr();
            if sig == 0.0 {
                0.0
            } else {
                sig / (inter + noise)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InstantResult {
    pub beamformers: BeamformerSet,
    pub p: Vec<f64>,
    pub sinr: Vec<f64>,
    pub min_sinr: f64,
    pub iterations: usize,
}

/// Max-min coherent SINR for one realization of the pilots, with
/// centralized MMSE beamformers and per-user budget `budget`.
pub fn maxmin_coh_instantaneous(
    r: &Realization,
    realization: usize,
    model: &dyn CsiModel,
    clusters: &[Vec<usize>],
    budget: f64,
    opts: &SolverOptions,
) -> Result<InstantResult> {
    opts.validate()?;
    let k = model.num_users();
    let team = opts.team(model.num_aps());
    let mut p = vec![budget; k];
    let mut last_change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let policy = Policy::prepare(CsiRegime::CellFreeCentralized, model, clusters, &p, &[], &team)?;
        let bf = policy.beamformers(r)?;
        let sinr = coherent_sinr(&bf, r, model, &p);
        if let Some(u) = sinr.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Domain(format!(
                "user {u} has zero SINR in realization {realization}"
            )));
        }
        let t: Vec<f64> = p.iter().zip(&sinr).map(|(pk, s)| pk / s).collect();
        let next = normalize(&t, budget, Norm::Max);
        last_change = max_rel_change(&p, &next);
        p = next;
        if last_change < opts.tol {
            let policy =
                Policy::prepare(CsiRegime::CellFreeCentralized, model, clusters, &p, &[], &team)?;
            let beamformers = policy.beamformers(r)?;
            let sinr = coherent_sinr(&beamformers, r, model, &p);
            return Ok(InstantResult {
                min_sinr: min_of(&sinr),
                beamformers,
                p,
                sinr,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change,
        last_iterate: p,
        realization: Some(realization),
    })
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub p: Vec<f64>,
    pub policy: Policy,
    pub moments: MomentSet,
    /// Weighted-noise SINRs at `p`.
    pub sinr: Vec<f64>,
    pub iterations: usize,
}

/// Un-normalized fixed point `p_k <- gamma_k p_k / SINR~_k` with
/// `lambda`-augmented MMSE beamformers. Users with zero target keep zero
/// power.
#[allow(clippy::too_many_arguments)]
pub fn pertx_feasibility(
    model: &dyn CsiModel,
    regime: CsiRegime,
    clusters: &[Vec<usize>],
    gamma: &[f64],
    lambda: &[f64],
    start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<FeasibilityResult> {
    opts.validate()?;
    let k = model.num_users();
    if gamma.len() != k || gamma.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::Domain("targets must be nonnegative, one per user".into()));
    }
    let team = opts.team(model.num_aps());
    let eval = opts.eval();
    let mut p: Vec<f64> = match start {
        Some(s) => s
            .iter()
            .zip(gamma)
            .map(|(x, g)| if *g > 0.0 { x.max(f64::MIN_POSITIVE).max(1e-12 * g) } else { 0.0 })
            .collect(),
        None => gamma.to_vec(),
    };
    let mut cap = f64::INFINITY;
    let mut last_change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let policy = Policy::prepare(regime, model, clusters, &p, lambda, &team)?;
        let m = estimate_moments(&policy, model, &eval)?;
        let sinr = uatf_sinrs(&m);
        if gamma.iter().all(|g| *g == 0.0) {
            return Ok(FeasibilityResult {
                p,
                policy,
                moments: m,
                sinr,
                iterations: it + 1,
            });
        }
        if it == 0 {
            cap = 1e6
                * (0..k)
                    .filter(|&j| gamma[j] > 0.0)
                    .map(|j| gamma[j] * m.power_v(j) / m.mean_inner(j, j).norm_sqr())
                    .fold(0.0, f64::max);
        }
        let exact = if opts.linear_update {
            solve_power_pair(&build_coupling(&m, gamma)).ok().map(|pair| pair.p_ul)
        } else {
            None
        };
        let mut next = vec![0.0; k];
        for j in 0..k {
            if let Some(e) = &exact {
                next[j] = e[j];
            } else if gamma[j] > 0.0 {
                if !(sinr[j] > 0.0) {
                    return Err(Error::Infeasible {
                        spectral_radius: f64::INFINITY,
                        realization: None,
                    });
                }
                next[j] = gamma[j] * p[j] / sinr[j];
            }
        }
        last_change = max_rel_change(&p, &next);
        let converged = last_change < opts.tol;
        let diverged = next.iter().copied().fold(0.0, f64::max) > cap || !cap.is_finite();
        p = next;
        if diverged {
            let c = build_coupling(&m, gamma);
            let rho = crate::duality::check_feasibility(&c).unwrap_or(f64::INFINITY);
            return Err(Error::Infeasible {
                spectral_radius: rho,
                realization: None,
            });
        }
        if converged {
            let policy = Policy::prepare(regime, model, clusters, &p, lambda, &team)?;
            let moments = estimate_moments(&policy, model, &eval)?;
            let sinr = uatf_sinrs(&moments);
            return Ok(FeasibilityResult {
                p,
                policy,
                moments,
                sinr,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change,
        last_iterate: p,
        realization: None,
    })
}

/// Downlink power used at each AP: `sum_k p_dl_k E|v_lk|^2`.
pub fn ap_usage(m: &MomentSet, p_dl: &[f64]) -> Vec<f64> {
    (0..m.num_aps())
        .map(|l| (0..m.num_users()).map(|k| p_dl[k] * m.ap_power(k, l)).sum())
        .collect()
}

#[derive(Debug, Clone)]
pub struct PerTxResult {
    pub policy: Policy,
    pub moments: MomentSet,
    pub coupling: CouplingMatrices,
    pub p_ul: Vec<f64>,
    pub p_dl: Vec<f64>,
    pub lambda: Vec<f64>,
    pub target: f64,
    /// Achieved downlink hardening SINRs after the final scaling.
    pub sinr: Vec<f64>,
    pub min_sinr: f64,
    pub used: Vec<f64>,
    /// Largest `|lambda_l (P_l - used_l)| / P_l`.
    pub slackness: f64,
    pub trace: Vec<TraceRow>,
}

struct Probe {
    feas: FeasibilityResult,
    coupling: CouplingMatrices,
    p_dl: Vec<f64>,
    used: Vec<f64>,
    lambda: Vec<f64>,
    slackness: f64,
}

/// Multipliers and adaptive steps, carried from one probe to the next.
struct DualState {
    lambda: Vec<f64>,
    step: Vec<f64>,
    prev_grad: Vec<f64>,
}

impl DualState {
    fn new(l_count: usize, opts: &SolverOptions) -> Self {
        Self {
            lambda: vec![0.0; l_count],
            step: vec![opts.lambda_step; l_count],
            prev_grad: vec![0.0; l_count],
        }
    }
}

enum ProbeOutcome {
    /// A point within the budgets (and, if requested, with small
    /// complementary slackness).
    Feasible(Probe),
    /// Budgets exceeded at the best point found, or infeasibility certified.
    Infeasible,
}

fn give_up(best: Option<Probe>, want_slackness: bool) -> ProbeOutcome {
    match best {
        Some(b) if want_slackness => ProbeOutcome::Feasible(b),
        _ => ProbeOutcome::Infeasible,
    }
}

/// Outer projected-gradient loop on `lambda` for a fixed common target.
/// Stops early once the weighted uplink power exceeds the weighted budget,
/// which rules the target out for every downlink solution.
#[allow(clippy::too_many_arguments)]
fn probe(
    model: &dyn CsiModel,
    regime: CsiRegime,
    clusters: &[Vec<usize>],
    target: f64,
    ap_budget: &[f64],
    dual: &mut DualState,
    start: Option<&[f64]>,
    want_slackness: bool,
    opts: &SolverOptions,
    trace: &mut Vec<TraceRow>,
) -> Result<ProbeOutcome> {
    let k = model.num_users();
    let l_count = model.num_aps();
    let gamma = vec![target; k];
    let DualState { lambda, step, prev_grad } = dual;
    let mut warm: Option<Vec<f64>> = start.map(|s| s.to_vec());
    let mut best_feasible: Option<Probe> = None;
    let mut last_ok: Option<Vec<f64>> = None;
    for it in 0..opts.max_lambda_iter {
        let attempt = pertx_feasibility(model, regime, clusters, &gamma, lambda, warm.as_deref(), opts)
            .and_then(|feas| {
                let coupling = build_coupling(&feas.moments, &gamma);
                let pair = solve_power_pair(&coupling)?;
                Ok((feas, coupling, pair))
            });
        let (feas, coupling, pair) = match attempt {
            Ok(x) => x,
            Err(Error::Infeasible { .. }) | Err(Error::NoConvergence { .. }) => match &last_ok {
                // Overshot: return to the last solvable multipliers with shorter steps.
                Some(prev) => {
                    lambda.clone_from(prev);
                    step.iter_mut().for_each(|s| *s *= 0.5);
                    prev_grad.iter_mut().for_each(|g| *g = 0.0);
                    continue;
                }
                None => return Ok(give_up(best_feasible, want_slackness)),
            },
            Err(e) => return Err(e),
        };
        last_ok = Some(lambda.clone());
        let used = ap_usage(&feas.moments, &pair.p_dl);
        let grad: Vec<f64> = used.iter().zip(ap_budget).map(|(u, b)| u / b - 1.0).collect();
        let violation = grad.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slackness = (0..l_count)
            .map(|l| lambda[l] * (ap_budget[l] - used[l]).abs() / ap_budget[l])
            .fold(0.0, f64::max);
        let weighted_budget: f64 = (0..l_count).map(|l| (1.0 + lambda[l]) * ap_budget[l]).sum();
        let weighted_used: f64 = pair.p_ul.iter().sum();
        trace.push(TraceRow {
            solver: "pertx_lambda",
            iteration: it,
            min_sinr: target,
            norm_p: used.iter().copied().fold(0.0, f64::max),
        });
        warm = Some(feas.p.clone());
        let result = Probe {
            feas,
            coupling,
            p_dl: pair.p_dl,
            used,
            lambda: lambda.clone(),
            slackness,
        };
        if violation <= opts.feasibility_tol {
            if !want_slackness || slackness <= opts.slackness_tol {
                return Ok(ProbeOutcome::Feasible(result));
            }
            if best_feasible.as_ref().is_none_or(|b| slackness < b.slackness) {
                best_feasible = Some(result);
            }
        } else if !want_slackness && weighted_used > weighted_budget * (1.0 + opts.feasibility_tol) {
            return Ok(ProbeOutcome::Infeasible);
        }
        // Sign-based adaptive steps on log(1 + lambda).
        for l in 0..l_count {
            let g = grad[l];
            if lambda[l] == 0.0 && g < 0.0 {
                prev_grad[l] = 0.0;
                continue;
            }
            if g * prev_grad[l] < 0.0 {
                step[l] *= 0.5;
            } else if prev_grad[l] != 0.0 {
                step[l] *= 1.2;
            }
            prev_grad[l] = g;
            lambda[l] = ((1.0 + lambda[l]) * (step[l] * g.signum()).exp() - 1.0).max(0.0);
        }
    }
    Ok(give_up(best_feasible, want_slackness))
}

/// Max-min downlink hardening SINR under per-AP power budgets: bisection on
/// the common target around the `lambda`-dual feasibility problem.
pub fn pertx_maxmin(
    model: &dyn CsiModel,
    regime: CsiRegime,
    clusters: &[Vec<usize>],
    ap_budget: &[f64],
    opts: &SolverOptions,
) -> Result<PerTxResult> {
    opts.validate()?;
    let l_count = model.num_aps();
    if ap_budget.len() != l_count || ap_budget.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Domain("per-AP budgets must be positive, one per AP".into()));
    }
    let total: f64 = ap_budget.iter().sum();
    let sum_power = maxmin_uatf(model, regime, clusters, total, Norm::Sum, opts)?;
    let mut trace = sum_power.trace.clone();
    let hi0 = sum_power.min_sinr;
    let mut dual = DualState::new(l_count, opts);

    let mut lo = 0.0;
    let mut hi = hi0;
    let mut warm: Option<Vec<f64>> = Some(sum_power.p.clone());
    let mut found: Option<Probe> = None;
    match probe(model, regime, clusters, hi0, ap_budget, &mut dual, warm.as_deref(), false, opts, &mut trace)? {
        ProbeOutcome::Feasible(pr) => {
            lo = hi0;
            found = Some(pr);
        }
        ProbeOutcome::Infeasible => {
            for _ in 0..opts.max_bisection {
                if hi - lo <= opts.bisection_tol * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                match probe(model, regime, clusters, mid, ap_budget, &mut dual, warm.as_deref(), false, opts, &mut trace)? {
                    ProbeOutcome::Feasible(pr) => {
                        lo = mid;
                        warm = Some(pr.feas.p.clone());
                        found = Some(pr);
                    }
                    ProbeOutcome::Infeasible => hi = mid,
                }
            }
        }
    }
    let found = found.ok_or_else(|| Error::Bracket("no feasible target above zero was found".into()))?;
    let best = if found.slackness <= opts.slackness_tol {
        Some(found)
    } else {
        dual = DualState {
            lambda: found.lambda.clone(),
            ..DualState::new(l_count, opts)
        };
        let start = found.feas.p.clone();
        match probe(model, regime, clusters, lo, ap_budget, &mut dual, Some(&start), true, opts, &mut trace)? {
            ProbeOutcome::Feasible(pr) if pr.slackness < found.slackness => Some(pr),
            _ => Some(found),
        }
    };
    let pr = best.ok_or_else(|| Error::Bracket("no feasible target above zero was found".into()))?;
    let scale = (0..l_count)
        .map(|l| if pr.used[l] > 0.0 { ap_budget[l] / pr.used[l] } else { f64::INFINITY })
        .fold(1.0, f64::min);
    let p_dl: Vec<f64> = pr.p_dl.iter().map(|p| p * scale).collect();
    let used: Vec<f64> = pr.used.iter().map(|u| u * scale).collect();
    let sinr = pr.coupling.downlink_sinr(&p_dl);
    let slackness = (0..l_count)
        .map(|l| pr.lambda[l] * (ap_budget[l] - used[l]).abs() / ap_budget[l])
        .fold(0.0, f64::max);
    Ok(PerTxResult {
        min_sinr: min_of(&sinr),
        target: pr.coupling.gamma[0],
        policy: pr.feas.policy,
        moments: pr.feas.moments,
        coupling: pr.coupling,
        p_ul: pr.feas.p,
        p_dl,
        lambda: pr.lambda,
        sinr,
        used,
        slackness,
        trace,
    })
}
