//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! with a failure status if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use cfmimo::alloc::{
    coherent_sinr, fractional_power, maxmin_coh_instantaneous, maxmin_uatf, pertx_maxmin, Direction,
    Norm, SolverOptions,
};
use cfmimo::beamform::{tmmse_residual, BeamformerSet, Perturbed, Policy, TeamConfig};
use cfmimo::bench::{emit_cdf, quantile, run_experiment, Bound, ExperimentSpec, RateRow};
use cfmimo::duality::{
    build_coupling, coherent_duality, conditional_coupling, conservation_gap, solve_power_pair,
    CouplingMatrices,
};
use cfmimo::fading::CovarianceSet;
use cfmimo::linalg::{c, CVec};
use cfmimo::model::{CsiModel, PilotNetwork, Realization};
use cfmimo::netgen::{place_network, CsiRegime, Deployment, Scenario, ScenarioConfig};
use cfmimo::pilots::{dft_codebook, PilotConfig};
use cfmimo::rates::{combined_std_err, estimate_moments, estimate_moments_many, Beamforming, EvalConfig, FnBeamforming, MomentSet};
use cfmimo::rng::{derive_key, purpose, stream};
use cfmimo::stats::{batch_of, BatchAccumulator, DEFAULT_BATCHES};

const SEED: u64 = 0x5eed_2024;
const DESK_DROPS: usize = 50;
const DESK_SAMPLES: usize = 20_000;
const ALT_DROPS: usize = 5;
const ALTERNATIVES: usize = 10;

type Outcome = Result<String, String>;

fn desk() -> Scenario {
    Scenario {
        csi_regime: CsiRegime::CellFreeLocal,
        ..Scenario::desk()
    }
}

struct DeskDrop {
    dep: Deployment,
    model: PilotNetwork,
    p: Vec<f64>,
}

fn desk_drop(d: usize) -> DeskDrop {
    let s = desk();
    let dep = place_network(&s, &mut stream(SEED, &[purpose::DEPLOYMENT, d as u64])).unwrap();
    let model = PilotNetwork::from_deployment(&dep, &s).unwrap();
    let p = fractional_power(&dep.gains, &dep.clusters, s.max_user_power(), Direction::Uplink).unwrap();
    DeskDrop { dep, model, p }
}

fn team(d: usize, samples: usize) -> TeamConfig {
    TeamConfig::new(samples, derive_key(SEED, &[purpose::PI_ESTIMATE, d as u64]), desk().num_aps)
}

/// Centralized MMSE mixed with the centralized MMSE of perturbed powers.
fn alternative(
    base: &Policy,
    other: Policy,
    a: f64,
    b: f64,
) -> FnBeamforming<impl Fn(&Realization) -> cfmimo::Result<BeamformerSet> + Sync + '_> {
    FnBeamforming {
        p: base.p.clone(),
        lambda: base.lambda.clone(),
        rule: move |r: &Realization| {
            let mut v = base.beamformers(r)?;
            let w = other.beamformers(r)?;
            for (bk, wk) in v.blocks.iter_mut().zip(&w.blocks) {
                for ((_, x), (_, y)) in bk.iter_mut().zip(wk) {
                    *x = &*x * c(a, 0.0) + y * c(b, 0.0);
                }
            }
            Ok(v)
        },
    }
}

struct DeskStats {
    identity_fail: Vec<String>,
    identity_worst: f64,
    alt_fail: Vec<String>,
    alt_checked: usize,
    order_fail: Vec<String>,
    order_checked: usize,
    nest_fail: Vec<String>,
    nest_checked: usize,
    spectral_fail: Vec<String>,
    min_rcond: f64,
    eig_range: (f64, f64),
}

fn desk_campaign() -> DeskStats {
    let mut st = DeskStats {
        identity_fail: vec![],
        identity_worst: 0.0,
        alt_fail: vec![],
        alt_checked: 0,
        order_fail: vec![],
        order_checked: 0,
        nest_fail: vec![],
        nest_checked: 0,
        spectral_fail: vec![],
        min_rcond: f64::INFINITY,
        eig_range: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for d in 0..DESK_DROPS {
        let dd = desk_drop(d);
        let model = &dd.model;
        let tc = team(d, DESK_SAMPLES);
        let cf = dd.dep.clusters.clone();
        let singles = dd.dep.clusters_for(CsiRegime::MultiCell, 1);
        let cen = Policy::prepare(CsiRegime::CellFreeCentralized, model, &cf, &dd.p, &[], &tc).unwrap();
        let loc = Policy::prepare(CsiRegime::CellFreeLocal, model, &cf, &dd.p, &[], &tc).unwrap();
        let mc = Policy::prepare(CsiRegime::MultiCell, model, &singles, &dd.p, &[], &tc).unwrap();

        let mut alts = Vec::new();
        if d < ALT_DROPS {
            let mut rng = stream(SEED, &[99, d as u64]);
            for _ in 0..ALTERNATIVES {
                let p2: Vec<f64> = dd
                    .p
                    .iter()
                    .map(|x| x * rng.sample::<f64, _>(StandardNormal).exp())
                    .collect();
                let other = Policy::prepare(CsiRegime::CellFreeCentralized, model, &cf, &p2, &[], &tc).unwrap();
                let a = 0.5 + rng.random::<f64>();
                let b = rng.random::<f64>() - 0.5;
                alts.push(alternative(&cen, other, a, b));
            }
        }
        let mut rules: Vec<&dyn Beamforming> = vec![&cen, &loc, &mc];
        rules.extend(alts.iter().map(|a| a as &dyn Beamforming));
        let eval = EvalConfig::new(DESK_SAMPLES, SEED, d as u64);
        let m = estimate_moments_many(&rules, model, &eval).unwrap();
        let (mc_m, loc_m, cen_m) = (&m[2], &m[1], &m[0]);
        let k_users = cen_m.num_users();

        for k in 0..k_users {
            let gap = cen_m.mmse_identity_gap(k);
            st.identity_worst = st.identity_worst.max(gap.value.abs() / gap.std_err);
            if gap.value.abs() > 3.0 * gap.std_err {
                st.identity_fail.push(format!("drop {d} user {k}: gap {:.3e} se {:.3e}", gap.value, gap.std_err));
            }
            let base = cen_m.mse(k);
            for (i, am) in m[3..].iter().enumerate() {
                let alt = am.mse(k);
                st.alt_checked += 1;
                if alt.value < base.value - 3.0 * combined_std_err(alt.std_err, base.std_err) {
                    st.alt_fail.push(format!("drop {d} user {k} alt {i}: {:.5} < {:.5}", alt.value, base.value));
                }
            }
        }

        for (name, ms) in [("centralized", cen_m), ("local", loc_m), ("multicell", mc_m)] {
            for k in 0..k_users {
                let (u, h, o) = (ms.uatf_rate(k), ms.coherent_rate(k), ms.optimistic_rate(k));
                st.order_checked += 1;
                if u.value > h.value + 3.0 * combined_std_err(u.std_err, h.std_err)
                    || h.value > o.value + 3.0 * combined_std_err(h.std_err, o.std_err)
                {
                    st.order_fail.push(format!(
                        "drop {d} {name} user {k}: {:.4} {:.4} {:.4}",
                        u.value, h.value, o.value
                    ));
                }
            }
        }

        for k in 0..k_users {
            let (a, b, cc) = (mc_m.uatf_rate(k), loc_m.uatf_rate(k), cen_m.uatf_rate(k));
            st.nest_checked += 1;
            if a.value > b.value + 3.0 * combined_std_err(a.std_err, b.std_err)
                || b.value > cc.value + 3.0 * combined_std_err(b.std_err, cc.std_err)
            {
                st.nest_fail.push(format!(
                    "drop {d} user {k}: {:.4} {:.4} {:.4}",
                    a.value, b.value, cc.value
                ));
            }
        }

        let pi = loc.pi().unwrap();
        st.min_rcond = st.min_rcond.min(loc.min_rcond().unwrap());
        for l in 0..pi.pi.len() {
            let (lo, lo_se) = pi.eig_min[l];
            let (hi, hi_se) = pi.eig_max[l];
            st.eig_range.0 = st.eig_range.0.min(lo);
            st.eig_range.1 = st.eig_range.1.max(hi);
            if !(lo > -3.0 * lo_se && hi < 1.0 + 3.0 * hi_se) {
                st.spectral_fail.push(format!("drop {d} AP {l}: [{lo:.3e}, {hi:.4}] se ({lo_se:.1e}, {hi_se:.1e})"));
            }
        }
    }
    st
}

fn summarize_failures(fails: &[String], checked: usize, ok: String) -> Outcome {
    if fails.is_empty() {
        Ok(ok)
    } else {
        Err(format!("{} of {checked} failed, first: {}", fails.len(), fails[0]))
    }
}

fn criterion_1(st: &DeskStats) -> Outcome {
    let users = DESK_DROPS * desk().num_users;
    if !st.identity_fail.is_empty() {
        return summarize_failures(&st.identity_fail, users, String::new());
    }
    summarize_failures(
        &st.alt_fail,
        st.alt_checked,
        format!(
            "{users} users, worst |gap|/se {:.2}; {} alternative comparisons",
            st.identity_worst, st.alt_checked
        ),
    )
}

fn criterion_4() -> Outcome {
    let dd = desk_drop(0);
    let model = &dd.model;
    let (l_count, k_users, n) = (model.num_aps(), model.num_users(), model.antennas());
    let samples = 50_000;
    let dim = l_count * k_users * n * n * 4;
    let mut acc = BatchAccumulator::new(dim, DEFAULT_BATCHES);
    let mut buf = vec![0.0; dim];
    for s in 0..samples {
        let r = model.draw(SEED, &[purpose::EVALUATION, 0, s as u64]);
        let mut idx = 0;
        for l in 0..l_count {
            for j in 0..k_users {
                let hhat = r.aps[l].hhat.column(j);
                let e = r.aps[l].h.column(j) - hhat;
                for a in 0..n {
                    for b in 0..n {
                        let cov = e[a] * e[b].conj();
                        let orth = hhat[a] * e[b].conj();
                        buf[idx..idx + 4].copy_from_slice(&[cov.re, cov.im, orth.re, orth.im]);
                        idx += 4;
                    }
                }
            }
        }
        acc.add(batch_of(s, samples, DEFAULT_BATCHES), &buf);
    }
    let mean = acc.mean();
    let se = acc.std_err();
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for l in 0..l_count {
        for j in 0..k_users {
            let cf = model.err_cov(l, j);
            for a in 0..n {
                for b in 0..n {
                    let target = cf[(a, b)];
                    let d_cov = c(mean[idx] - target.re, mean[idx + 1] - target.im).norm();
                    let se_cov = se[idx].hypot(se[idx + 1]);
                    let d_orth = c(mean[idx + 2], mean[idx + 3]).norm();
                    let se_orth = se[idx + 2].hypot(se[idx + 3]);
                    worst = worst.max(d_cov / se_cov).max(d_orth / se_orth);
                    if d_cov > 3.0 * se_cov {
                        fails.push(format!("error cov AP {l} user {j} ({a},{b}): off by {d_cov:.2e}, se {se_cov:.2e}"));
                    }
                    if d_orth > 3.0 * se_orth {
                        fails.push(format!("orthogonality AP {l} user {j} ({a},{b}): {d_orth:.2e}, se {se_orth:.2e}"));
                    }
                    idx += 4;
                }
            }
        }
    }
    let checked = 2 * l_count * k_users * n * n;
    summarize_failures(&fails, checked, format!("{checked} complex entries, worst deviation {worst:.2} se"))
}

fn criterion_5() -> Outcome {
    let gains = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.3, 0.8]);
    let cov = CovarianceSet::diagonal(&gains, 1).unwrap();
    let cfg = PilotConfig::new(dft_codebook(1), vec![5.0, 5.0], vec![0, 0]).unwrap();
    let model = PilotNetwork::new(cov, cfg).unwrap();
    let clusters = vec![vec![0, 1], vec![0, 1]];
    let p = [1.0, 1.0];
    let tc = TeamConfig::new(400_000, derive_key(SEED, &[5]), 2);
    let pol = Policy::prepare(CsiRegime::CellFreeLocal, &model, &clusters, &p, &[], &tc).unwrap();
    let (outer, inner) = (4000, 50);
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let res = tmmse_residual(&pol, k, &clusters[k], &model, &p, &[0.0, 0.0], outer, inner, SEED + k as u64)
            .map_err(|e| e.to_string())?;
        for r in &res {
            worst = worst.max(r.raw / r.std_err);
            if r.raw > 3.0 * r.std_err {
                return Err(format!("user {k} AP {}: residual {:.3e} se {:.3e}", r.ap, r.raw, r.std_err));
            }
        }
    }
    let bad = Perturbed {
        base: &pol,
        ap: 0,
        user: 0,
        offset: CVec::from_element(1, c(0.1, 0.0)),
    };
    let res = tmmse_residual(&bad, 0, &clusters[0], &model, &p, &[0.0, 0.0], outer, inner, SEED + 7)
        .map_err(|e| e.to_string())?;
    let r = res[0];
    if r.raw > 10.0 * r.std_err {
        Ok(format!(
            "optimal: max residual/se {worst:.2}; perturbed: {:.3e} = {:.0} se",
            r.raw,
            r.raw / r.std_err
        ))
    } else {
        Err(format!("perturbed residual {:.3e} only {:.1} se", r.raw, r.raw / r.std_err))
    }
}

fn criterion_6(st: &DeskStats) -> Outcome {
    if st.min_rcond <= 1e-8 {
        return Err(format!("reciprocal condition {:.2e}", st.min_rcond));
    }
    summarize_failures(
        &st.spectral_fail,
        DESK_DROPS * desk().num_aps,
        format!(
            "eigenvalues in [{:.2e}, {:.4}], min rcond {:.3}",
            st.eig_range.0, st.eig_range.1, st.min_rcond
        ),
    )
}

fn check_pair(c: &CouplingMatrices, tol: f64) -> Result<(f64, f64), String> {
    let pair = solve_power_pair(c).map_err(|e| e.to_string())?;
    let gap = conservation_gap(c, &pair);
    let sinr = c.downlink_sinr(&pair.p_dl);
    let err = sinr
        .iter()
        .zip(&c.gamma)
        .map(|(s, g)| (s - g).abs() / g.max(1e-300))
        .fold(0.0, f64::max);
    if gap > tol.min(1e-10).max(1e-10) && gap > tol {
        return Err(format!("conservation gap {gap:.2e}"));
    }
    if err > 1e-8 {
        return Err(format!("target recovery error {err:.2e}"));
    }
    Ok((gap, err))
}

fn centralized_desk_moments() -> (DeskDrop, Policy, MomentSet) {
    let dd = desk_drop(0);
    let tc = team(0, 1000);
    let pol = Policy::prepare(CsiRegime::CellFreeCentralized, &dd.model, &dd.dep.clusters, &dd.p, &[], &tc).unwrap();
    let m = estimate_moments(&pol, &dd.model, &EvalConfig::new(DESK_SAMPLES, SEED, 0)).unwrap();
    (dd, pol, m)
}

fn criterion_7() -> Outcome {
    let example = CouplingMatrices {
        d: vec![1.0, 1.0],
        b: vec![vec![0.0, 0.1], vec![0.2, 0.0]],
        sigma: vec![1.0, 1.0],
        gamma: vec![1.0, 1.0],
    };
    let pair = solve_power_pair(&example).map_err(|e| e.to_string())?;
    let want_dl = [1.122449, 1.224490];
    let exact_dl = [1.1 / 0.98, 1.2 / 0.98];
    for i in 0..2 {
        if (pair.p_dl[i] - exact_dl[i]).abs() > 1e-9
            || (pair.p_ul[i] - exact_dl[1 - i]).abs() > 1e-9
            || (pair.p_dl[i] - want_dl[i]).abs() > 1e-6
        {
            return Err(format!("hand example gave {:?} / {:?}", pair.p_dl, pair.p_ul));
        }
    }
    check_pair(&example, 1e-10)?;

    let (_, _, m) = centralized_desk_moments();
    let gamma: Vec<f64> = (0..m.num_users()).map(|k| 0.5 * m.uatf_sinr(k).value).collect();
    let c = build_coupling(&m, &gamma);
    let (gap, err) = check_pair(&c, 1e-10)?;
    Ok(format!("hand example exact to 1e-9; desk drop: conservation {gap:.1e}, target error {err:.1e}"))
}

fn criterion_8() -> Outcome {
    let (dd, pol, _) = centralized_desk_moments();
    let mut worst_gap: f64 = 0.0;
    let mut worst_err: f64 = 0.0;
    for s in 0..100 {
        let r = dd.model.draw(SEED, &[purpose::EVALUATION, 1, s]);
        let bf = pol.beamformers(&r).map_err(|e| e.to_string())?;
        let ul = coherent_sinr(&bf, &r, &dd.model, &pol.p);
        let gamma: Vec<f64> = ul.iter().map(|x| 0.5 * x).collect();
        let c = conditional_coupling(&bf, &r, &dd.model, &gamma);
        let pair = coherent_duality(&c, s as usize).map_err(|e| e.to_string())?;
        let gap = conservation_gap(&c, &pair);
        let err = c
            .downlink_sinr(&pair.p_dl)
            .iter()
            .zip(&gamma)
            .map(|(a, g)| (a - g).abs() / g)
            .fold(0.0, f64::max);
        worst_gap = worst_gap.max(gap);
        worst_err = worst_err.max(err);
    }
    if worst_gap > 1e-8 || worst_err > 1e-8 {
        return Err(format!("conservation {worst_gap:.2e}, target error {worst_err:.2e}"));
    }
    Ok(format!("100 realizations: conservation {worst_gap:.1e}, target error {worst_err:.1e}"))
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min - 1.0
}

fn criterion_9() -> Outcome {
    let dd = desk_drop(0);
    let pmax = desk().max_user_power();
    let opts = SolverOptions {
        samples: 5000,
        pi_samples: 1000,
        seed: SEED,
        drop: 0,
        ..Default::default()
    };
    let cl = &dd.dep.clusters;
    let r = maxmin_uatf(&dd.model, CsiRegime::CellFreeCentralized, cl, pmax, Norm::Max, &opts)
        .map_err(|e| e.to_string())?;
    let maxp = r.p.iter().copied().fold(0.0, f64::max);
    if spread(&r.sinr) > 1e-4 || maxp != pmax {
        return Err(format!("UatF solver: spread {:.2e}, max power {maxp}", spread(&r.sinr)));
    }
    let uatf_msg = format!("UatF spread {:.1e} in {} iterations", spread(&r.sinr), r.iterations);

    let mut worst_inst: f64 = 0.0;
    for s in 0..20 {
        let real = dd.model.draw(SEED, &[purpose::ALLOCATION, 0, s]);
        let inst = maxmin_coh_instantaneous(&real, s as usize, &dd.model, cl, pmax, &opts)
            .map_err(|e| e.to_string())?;
        worst_inst = worst_inst.max(spread(&inst.sinr));
    }
    if worst_inst > 1e-4 {
        return Err(format!("instantaneous solver spread {worst_inst:.2e}"));
    }

    // Per-AP budgets on a smaller Monte Carlo budget.
    let small = SolverOptions {
        samples: 1000,
        ..opts.clone()
    };
    let budgets = vec![0.6 * pmax * desk().num_users as f64 / desk().num_aps as f64; desk().num_aps];
    let pt = pertx_maxmin(&dd.model, CsiRegime::CellFreeCentralized, cl, &budgets, &small)
        .map_err(|e| e.to_string())?;
    for l in 0..budgets.len() {
        if pt.used[l] > budgets[l] + 1e-6 {
            return Err(format!("AP {l} uses {:.6} > {:.6}", pt.used[l], budgets[l]));
        }
        if pt.lambda[l] * (budgets[l] - pt.used[l]).abs() > 1e-4 * budgets[l] {
            return Err(format!(
                "slackness at AP {l}: lambda {:.3e}, slack {:.3e}",
                pt.lambda[l],
                budgets[l] - pt.used[l]
            ));
        }
    }

    // One AP: the per-AP constraint is the sum-power constraint.
    let single = Scenario {
        num_aps: 1,
        cluster_size: 1,
        num_users: 4,
        ..desk()
    };
    let dep = place_network(&single, &mut stream(SEED, &[purpose::DEPLOYMENT, 77])).unwrap();
    let model = PilotNetwork::from_deployment(&dep, &single).unwrap();
    let budget = pmax * 2.0;
    let one = pertx_maxmin(&model, CsiRegime::CellFreeCentralized, &dep.clusters, &[budget], &small)
        .map_err(|e| e.to_string())?;
    let sum = maxmin_uatf(&model, CsiRegime::CellFreeCentralized, &dep.clusters, budget, Norm::Sum, &small)
        .map_err(|e| e.to_string())?;
    let rel = (one.min_sinr - sum.min_sinr).abs() / sum.min_sinr;
    if rel > 1e-4 {
        return Err(format!(
            "single AP: per-AP {:.6} vs sum-power {:.6}, lambda {}",
            one.min_sinr, sum.min_sinr, one.lambda[0]
        ));
    }
    Ok(format!(
        "{uatf_msg}; instantaneous spread {worst_inst:.1e}; per-AP lambda {:?}, min SINR {:.4}; single AP off by {rel:.1e}",
        pt.lambda.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>(),
        pt.min_sinr
    ))
}

fn criterion_10() -> Outcome {
    let config = ScenarioConfig {
        scenario: Scenario::full_scale(),
        master_seed: SEED,
        num_drops: 10,
        num_samples: 5000,
    };
    let s = &config.scenario;
    if (s.num_users, s.num_aps, s.antennas_per_ap, s.pilot_len) != (32, 16, 8, 10)
        || s.pilot_power_dbm != 20.0
        || s.max_user_power_dbm != 20.0
        || s.shadow_std_db != 4.0
        || s.shadow_decorr != 9.0
        || s.bandwidth_hz != 20e6
        || s.noise_figure_db != 7.0
    {
        return Err("scenario constants differ from the reference setup".into());
    }
    let spec = ExperimentSpec::new(config);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = run_experiment(&spec, dir.path(), 1).map_err(|e| e.to_string())?;
    let rows: Vec<RateRow> = cfmimo::bench::read_rate_rows(&files.rates).map_err(|e| e.to_string())?;
    let cdf = emit_cdf(&rows);
    let median = |scheme: &str| {
        let mut v: Vec<f64> = cdf
            .iter()
            .filter(|r| r.scheme == scheme && r.bound == Bound::Uatf)
            .map(|r| r.value)
            .collect();
        v.sort_by(|a, b| a.total_cmp(b));
        quantile(&v, 0.5)
    };
    let (m, l, cz) = (median("multicell"), median("local"), median("centralized"));
    if rows.len() != 10 * 32 * 3 * 3 {
        return Err(format!("{} rows", rows.len()));
    }
    if cz >= l && l >= m {
        Ok(format!("median UatF rates: centralized {cz:.3} >= local {l:.3} >= multicell {m:.3}"))
    } else {
        Err(format!("median UatF rates: centralized {cz:.3}, local {l:.3}, multicell {m:.3}"))
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, start: Instant, out: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(msg) => println!("criterion {n:>2} PASS [{name}] {msg} ({secs:.1}s)"),
            Err(msg) => {
                failures += 1;
                println!("criterion {n:>2} FAIL [{name}] {msg} ({secs:.1}s)");
            }
        }
    };
    let t = Instant::now();
    let st = desk_campaign();
    println!(
        "desk campaign: {DESK_DROPS} drops x {DESK_SAMPLES} samples in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    let now = Instant::now();
    report(1, "MMSE-SINR identity", now, criterion_1(&st));
    report(
        2,
        "bound ordering",
        now,
        summarize_failures(&st.order_fail, st.order_checked, format!("{} user/scheme pairs", st.order_checked)),
    );
    report(
        3,
        "CSI regime nesting",
        now,
        summarize_failures(&st.nest_fail, st.nest_checked, format!("{} users", st.nest_checked)),
    );
    let t = Instant::now();
    report(4, "estimator correctness", t, criterion_4());
    let t = Instant::now();
    report(5, "team optimality", t, criterion_5());
    report(6, "statistical stage spectrum", now, criterion_6(&st));
    let t = Instant::now();
    report(7, "hardening duality", t, criterion_7());
    let t = Instant::now();
    report(8, "coherent duality", t, criterion_8());
    let t = Instant::now();
    report(9, "max-min solvers", t, criterion_9());
    let t = Instant::now();
    report(10, "reference scenario", t, criterion_10());
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
