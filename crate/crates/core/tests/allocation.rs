use cfmimo::alloc::{ap_usage, maxmin_uatf, pertx_feasibility, pertx_maxmin, Norm, SolverOptions};
use cfmimo::beamform::{Policy, TeamConfig};
use cfmimo::duality::{build_coupling, solve_power_pair};
use cfmimo::fading::CovarianceSet;
use cfmimo::model::PilotNetwork;
use cfmimo::netgen::{dbm_to_mw, place_network, CsiRegime, Deployment, Scenario};
use cfmimo::pilots::{dft_codebook, PilotConfig};
use cfmimo::rates::{estimate_moments, EvalConfig};
use cfmimo::rng::stream;

fn drop_of(s: &Scenario, seed: u64) -> (Deployment, PilotNetwork) {
    let dep = place_network(s, &mut stream(seed, &[3])).unwrap();
    let model = PilotNetwork::from_deployment(&dep, s).unwrap();
    (dep, model)
}

fn opts() -> SolverOptions {
    SolverOptions { samples: 300, pi_samples: 300, seed: 17, ..Default::default() }
}

#[test]
fn max_min_equalizes_and_meets_the_budget() {
    let s = Scenario::desk();
    let (dep, model) = drop_of(&s, 1);
    let pmax = s.max_user_power();
    for (norm, budget) in [(Norm::Max, pmax), (Norm::Sum, pmax * s.num_users as f64)] {
        let r = maxmin_uatf(&model, CsiRegime::CellFreeCentralized, &dep.clusters, budget, norm, &opts()).unwrap();
        let reached = match norm {
            Norm::Max => r.p.iter().copied().fold(0.0, f64::max),
            Norm::Sum => r.p.iter().sum(),
        };
        assert!((reached - budget).abs() <= 1e-6 * budget, "{norm:?}: {reached} vs {budget}");
        for s in &r.sinr {
            assert!((s - r.min_sinr).abs() <= 1e-4 * r.min_sinr, "{s} vs {}", r.min_sinr);
        }
    }
}

#[test]
fn feasibility_returns_the_exact_uplink_powers() {
    let s = Scenario::desk();
    let (dep, model) = drop_of(&s, 2);
    let o = opts();
    let r = maxmin_uatf(&model, CsiRegime::CellFreeCentralized, &dep.clusters, s.max_user_power(), Norm::Max, &o)
        .unwrap();
    let gamma = vec![0.5 * r.min_sinr; s.num_users];
    let f = pertx_feasibility(&model, CsiRegime::CellFreeCentralized, &dep.clusters, &gamma, &[0.0; 4], None, &o)
        .unwrap();
    let pair = solve_power_pair(&build_coupling(&f.moments, &gamma)).unwrap();
    for (a, b) in f.p.iter().zip(&pair.p_ul) {
        assert!((a - b).abs() <= 1e-4 * b, "{a} vs {b}");
    }
    for s in &f.sinr {
        assert!((s - gamma[0]).abs() <= 1e-4 * gamma[0]);
    }
}

#[test]
fn per_ap_budgets_bind_where_prices_are_positive() {
    let s = Scenario::desk();
    let (dep, model) = drop_of(&s, 3);
    let o = opts();
    let budgets = vec![0.5 * s.max_user_power(); s.num_aps];
    let r = pertx_maxmin(&model, CsiRegime::CellFreeCentralized, &dep.clusters, &budgets, &o).unwrap();
    let used = ap_usage(&r.moments, &r.p_dl);
    for l in 0..s.num_aps {
        assert!(used[l] <= budgets[l] * (1.0 + 1e-5), "AP {l} over budget");
        if r.lambda[l] > 0.0 {
            assert!((used[l] - budgets[l]).abs() <= 1e-3 * budgets[l], "AP {l} priced but slack");
        }
    }
    assert!(r.lambda.iter().any(|x| *x > 0.0));
    // The sum budget relaxes every per-AP budget.
    let total: f64 = budgets.iter().sum();
    let relaxed =
        maxmin_uatf(&model, CsiRegime::CellFreeCentralized, &dep.clusters, total, Norm::Sum, &o).unwrap();
    assert!(r.min_sinr <= relaxed.min_sinr * (1.0 + 1e-4));

    let doubled: Vec<f64> = budgets.iter().map(|b| 2.0 * b).collect();
    let more = pertx_maxmin(&model, CsiRegime::CellFreeCentralized, &dep.clusters, &doubled, &o).unwrap();
    assert!(more.min_sinr >= r.min_sinr * (1.0 - 1e-4));
}

#[test]
fn estimate_form_moments_agree_with_the_channel_form() {
    let s = Scenario::desk();
    let (dep, model) = drop_of(&s, 4);
    let p = vec![s.max_user_power(); s.num_users];
    let team = TeamConfig::new(500, 5, s.num_aps);
    let pol = Policy::prepare(CsiRegime::CellFreeCentralized, &model, &dep.clusters, &p, &[], &team).unwrap();
    let mut eval = EvalConfig::new(20_000, 6, 0);
    eval.estimate_form = true;
    let m = estimate_moments(&pol, &model, &eval).unwrap();
    for j in 0..s.num_users {
        for k in 0..s.num_users {
            let se = m.second_inner_std_err(j, k);
            let (a, b) = (m.second_inner(j, k), m.second_inner_est(j, k).unwrap());
            assert!((a - b).abs() <= 4.0 * 2f64.sqrt() * se + 1e-12, "({j},{k}): {a} vs {b}");
            let spread = (a / eval.samples as f64).sqrt();
            let d = m.mean_inner(j, k) - m.mean_inner_est(j, k).unwrap();
            assert!(d.norm() <= 4.0 * spread + 1e-12, "({j},{k})");
        }
    }
}

#[test]
fn coherent_and_optimistic_bounds_meet_with_clean_pilots() {
    let s = Scenario::desk();
    let dep = place_network(&s, &mut stream(5, &[3])).unwrap();
    let gap = |pilot_dbm: f64| {
        // Every user gets its own pilot.
        let cov = CovarianceSet::diagonal(&dep.gains, s.antennas_per_ap).unwrap();
        let users = s.num_users;
        let cfg = PilotConfig::new(dft_codebook(users), vec![dbm_to_mw(pilot_dbm); users], (0..users).collect())
            .unwrap();
        let model = PilotNetwork::new(cov, cfg).unwrap();
        let p = vec![s.max_user_power(); s.num_users];
        let team = TeamConfig::new(500, 5, s.num_aps);
        let pol =
            Policy::prepare(CsiRegime::CellFreeCentralized, &model, &dep.clusters, &p, &[], &team).unwrap();
        let m = estimate_moments(&pol, &model, &EvalConfig::new(2000, 6, 0)).unwrap();
        (0..s.num_users)
            .map(|k| m.optimistic_rate(k).value - m.coherent_rate(k).value)
            .fold(0.0, f64::max)
    };
    let (noisy, clean) = (gap(0.0), gap(80.0));
    assert!(clean >= -1e-9);
    assert!(clean < 0.05, "clean gap {clean}");
    assert!(clean < noisy, "{clean} vs {noisy}");
}
