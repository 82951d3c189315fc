//! Seeded multi-drop experiments and their CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{fractional_power, maxmin_uatf, Direction, Norm, SolverOptions, TraceRow};
use crate::beamform::{Policy, TeamConfig};
use crate::error::{Error, Result};
use crate::model::PilotNetwork;
use crate::netgen::{place_network, CsiRegime, ScenarioConfig};
use crate::rates::{estimate_moments_many, Beamforming, EvalConfig, MomentSet, RateReport};
use crate::rng::{derive_key, purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Uatf,
    Coh,
    Oer,
}

impl Bound {
    pub const ALL: [Bound; 3] = [Bound::Uatf, Bound::Coh, Bound::Oer];

    pub fn label(self) -> &'static str {
        match self {
            Bound::Uatf => "uatf",
            Bound::Coh => "coh",
            Bound::Oer => "oer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerPolicy {
    /// Every user at the maximum power.
    Full,
    /// Statistical fractional uplink policy.
    Fractional,
    /// Max-min UatF fixed point with a per-user budget.
    MaxMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    pub regime: CsiRegime,
    pub power: PowerPolicy,
}

impl SchemeSpec {
    pub fn new(regime: CsiRegime, power: PowerPolicy) -> Self {
        Self {
            name: regime.label().to_string(),
            regime,
            power,
        }
    }
}

/// The schemes run by default: multi-cell, local and centralized, plus
/// mixed when the configuration asks for it.
pub fn default_schemes(config: &ScenarioConfig, power: PowerPolicy) -> Vec<SchemeSpec> {
    let mut out = vec![
        SchemeSpec::new(CsiRegime::MultiCell, power),
        SchemeSpec::new(CsiRegime::CellFreeLocal, power),
        SchemeSpec::new(CsiRegime::CellFreeCentralized, power),
    ];
    if config.scenario.csi_regime == CsiRegime::CellFreeMixed {
        out.push(SchemeSpec::new(CsiRegime::CellFreeMixed, power));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: ScenarioConfig,
    pub schemes: Vec<SchemeSpec>,
    pub bounds: Vec<Bound>,
    /// Samples for the statistical team stage; defaults to `num_samples`.
    pub pi_samples: Option<usize>,
    pub diagnostics: bool,
}

impl ExperimentSpec {
    pub fn new(config: ScenarioConfig) -> Self {
        let schemes = default_schemes(&config, PowerPolicy::Fractional);
        Self {
            config,
            schemes,
            bounds: Bound::ALL.to_vec(),
            pi_samples: None,
            diagnostics: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "at least one scheme is required"));
        }
        if self.bounds.is_empty() {
            return Err(Error::config("bounds", "at least one bound is required"));
        }
        let mut names: Vec<&str> = self.schemes.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.schemes.len() {
            return Err(Error::config("schemes", "scheme names must be unique"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub drop_id: usize,
    pub user_id: usize,
    pub scheme: String,
    pub bound: Bound,
    pub rate_bits_per_symbol: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub drop_id: usize,
    pub scheme: String,
    pub min_rcond: Option<f64>,
    pub pi_eig_min: Option<f64>,
    pub pi_eig_max: Option<f64>,
    pub solver_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct DropResult {
    pub rows: Vec<RateRow>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub traces: Vec<(usize, String, TraceRow)>,
}

fn report_rows(drop: usize, scheme: &str, bounds: &[Bound], rep: &RateReport) -> Vec<RateRow> {
    let mut rows = Vec::with_capacity(rep.users.len() * bounds.len());
    for (k, u) in rep.users.iter().enumerate() {
        for &b in bounds {
            let e = match b {
                Bound::Uatf => u.rate_uatf,
                Bound::Coh => u.rate_coh,
                Bound::Oer => u.rate_oer,
            };
            rows.push(RateRow {
                drop_id: drop,
                user_id: k,
                scheme: scheme.to_string(),
                bound: b,
                rate_bits_per_symbol: e.value,
                std_err: e.std_err,
            });
        }
    }
    rows
}

/// Runs every scheme on one drop. All schemes see the same realizations.
pub fn run_drop(spec: &ExperimentSpec, drop: usize) -> Result<DropResult> {
    let cfg = &spec.config;
    let scenario = &cfg.scenario;
    let seed = cfg.master_seed;
    let dep = place_network(scenario, &mut stream(seed, &[purpose::DEPLOYMENT, drop as u64]))?;
    let model = PilotNetwork::from_deployment(&dep, scenario)?;
    let eval = EvalConfig::new(cfg.num_samples, seed, drop as u64);
    let pi_samples = spec.pi_samples.unwrap_or(cfg.num_samples);
    let team = TeamConfig::new(
        pi_samples,
        derive_key(seed, &[purpose::PI_ESTIMATE, drop as u64]),
        scenario.num_aps,
    );
    let pmax = scenario.max_user_power();
    let mut out = DropResult::default();
    let mut prepared: Vec<(Policy, Option<MomentSet>, Option<usize>)> = Vec::new();
    for scheme in &spec.schemes {
        let clusters = dep.clusters_for(scheme.regime, scenario.cluster_size);
        match scheme.power {
            PowerPolicy::Full | PowerPolicy::Fractional => {
                let p = if scheme.power == PowerPolicy::Full {
                    vec![pmax; scenario.num_users]
                } else {
                    fractional_power(&dep.gains, &clusters, pmax, Direction::Uplink)?
                };
                let policy = Policy::prepare(scheme.regime, &model, &clusters, &p, &[], &team)?;
                prepared.push((policy, None, None));
            }
            PowerPolicy::MaxMin => {
                let opts = SolverOptions {
                    samples: cfg.num_samples,
                    pi_samples,
                    seed,
                    drop: drop as u64,
                    ..Default::default()
                };
                let r = maxmin_uatf(&model, scheme.regime, &clusters, pmax, Norm::Max, &opts)?;
                if spec.diagnostics {
                    out.traces
                        .extend(r.trace.iter().map(|t| (drop, scheme.name.clone(), t.clone())));
                }
                prepared.push((r.policy, Some(r.moments), Some(r.iterations)));
            }
        }
    }
    let pending: Vec<&dyn Beamforming> = prepared
        .iter()
        .filter(|(_, m, _)| m.is_none())
        .map(|(p, _, _)| p as &dyn Beamforming)
        .collect();
    let mut fresh = estimate_moments_many(&pending, &model, &eval)?.into_iter();
    for (scheme, (policy, moments, iterations)) in spec.schemes.iter().zip(prepared) {
        let moments = match moments {
            Some(m) => m,
            None => fresh.next().expect("one moment set per pending scheme"),
        };
        out.rows.extend(report_rows(drop, &scheme.name, &spec.bounds, &moments.report()));
        if spec.diagnostics {
            let pi = policy.pi();
            out.diagnostics.push(DiagnosticRow {
                drop_id: drop,
                scheme: scheme.name.clone(),
                min_rcond: policy.min_rcond(),
                pi_eig_min: pi.map(|p| p.eig_min.iter().map(|e| e.0).fold(f64::INFINITY, f64::min)),
                pi_eig_max: pi.map(|p| p.eig_max.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)),
                solver_iterations: iterations,
            });
        }
    }
    Ok(out)
}

/// Runs all drops on a pool of `threads` workers, keeping drop order.
pub fn run_drops(spec: &ExperimentSpec, threads: usize) -> Result<DropResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let results: Vec<Result<DropResult>> = pool.install(|| {
        (0..spec.config.num_drops)
            .into_par_iter()
            .map(|d| {
                log::info!("drop {d} started");
                run_drop(spec, d)
            })
            .collect()
    });
    let mut all = DropResult::default();
    for r in results {
        let r = r?;
        all.rows.extend(r.rows);
        all.diagnostics.extend(r.diagnostics);
        all.traces.extend(r.traces);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub scheme: String,
    pub bound: Bound,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn groups(rows: &[RateRow]) -> BTreeMap<(String, Bound), Vec<f64>> {
    let mut g: BTreeMap<(String, Bound), Vec<f64>> = BTreeMap::new();
    for r in rows {
        g.entry((r.scheme.clone(), r.bound))
            .or_default()
            .push(r.rate_bits_per_symbol);
    }
    for v in g.values_mut() {
        v.sort_by(|a, b| a.total_cmp(b));
    }
    g
}

pub fn summarize(rows: &[RateRow]) -> Vec<SummaryEntry> {
    groups(rows)
        .into_iter()
        .map(|((scheme, bound), v)| SummaryEntry {
            scheme,
            bound,
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            p5: quantile(&v, 0.05),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub scheme: String,
    pub bound: Bound,
    pub value: f64,
    pub quantile: f64,
}

/// Empirical CDF per (scheme, bound) with quantiles `(i + 0.5) / n`.
pub fn emit_cdf(rows: &[RateRow]) -> Vec<CdfRow> {
    let mut out = Vec::new();
    for ((scheme, bound), v) in groups(rows) {
        let n = v.len() as f64;
        for (i, x) in v.into_iter().enumerate() {
            out.push(CdfRow {
                scheme: scheme.clone(),
                bound,
                value: x,
                quantile: (i as f64 + 0.5) / n,
            });
        }
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rate_rows(path: &Path) -> Result<Vec<RateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentFiles {
    pub rates: PathBuf,
    pub summary: PathBuf,
    pub cdf: PathBuf,
    pub diagnostics: Option<PathBuf>,
}

/// Writes outputs through temporary names and renames them only once all
/// of them exist; on failure nothing is left behind.
struct Staged {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new() -> Self {
        Self { pending: Vec::new() }
    }

    fn path(&mut self, dir: &Path, name: &str) -> PathBuf {
        let tmp = dir.join(format!(".{name}.partial"));
        self.pending.push((tmp.clone(), dir.join(name)));
        tmp
    }

    fn commit(mut self) -> Result<()> {
        for (tmp, dst) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &dst)?;
        }
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path, threads: usize) -> Result<ExperimentFiles> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let result = run_drops(spec, threads)?;
    let mut staged = Staged::new();
    let rates = staged.path(out_dir, "rates.csv");
    write_csv(&rates, &result.rows)?;
    let summary = staged.path(out_dir, "summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&summarize(&result.rows))?)?;
    let cdf = staged.path(out_dir, "cdf.csv");
    write_csv(&cdf, &emit_cdf(&result.rows))?;
    let diagnostics = if spec.diagnostics {
        let d = staged.path(out_dir, "diagnostics.csv");
        write_csv(&d, &result.diagnostics)?;
        if !result.traces.is_empty() {
            let t = staged.path(out_dir, "trace.csv");
            let rows: Vec<TraceCsvRow> = result
                .traces
                .iter()
                .map(|(d, s, t)| TraceCsvRow {
                    drop_id: *d,
                    scheme: s.clone(),
                    solver: t.solver,
                    iteration: t.iteration,
                    min_sinr: t.min_sinr,
                    norm_p: t.norm_p,
                })
                .collect();
            write_csv(&t, &rows)?;
        }
        Some(out_dir.join("diagnostics.csv"))
    } else {
        None
    };
    staged.commit()?;
    Ok(ExperimentFiles {
        rates: out_dir.join("rates.csv"),
        summary: out_dir.join("summary.json"),
        cdf: out_dir.join("cdf.csv"),
        diagnostics,
    })
}

#[derive(Serialize)]
struct TraceCsvRow {
    drop_id: usize,
    scheme: String,
    solver: &'static str,
    iteration: usize,
    min_sinr: f64,
    norm_p: f64,
}
