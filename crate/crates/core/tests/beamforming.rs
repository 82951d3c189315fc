use nalgebra::DMatrix;
use rand::Rng;

use cfmimo::alloc::{fractional_power, Direction};
use cfmimo::beamform::{Policy, TeamConfig};
use cfmimo::fading::CovarianceSet;
use cfmimo::linalg::{c, cn_vector, CVec};
use cfmimo::model::PilotNetwork;
use cfmimo::netgen::{place_network, CsiRegime, Scenario};
use cfmimo::pilots::{dft_codebook, PilotConfig};
use cfmimo::rates::{combined_std_err, estimate_moments, estimate_moments_many, Beamforming, EvalConfig};
use cfmimo::rng::stream;

fn two_ap_model() -> PilotNetwork {
    let gains = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.3, 0.8]);
    let cov = CovarianceSet::diagonal(&gains, 1).unwrap();
    let cfg = PilotConfig::new(dft_codebook(1), vec![5.0, 5.0], vec![0, 0]).unwrap();
    PilotNetwork::new(cov, cfg).unwrap()
}

#[test]
fn team_coefficients_are_first_order_optimal() {
    let model = two_ap_model();
    let clusters = vec![vec![0, 1], vec![0, 1]];
    let p = [1.0, 1.0];
    let team = TeamConfig::new(200_000, 3, 2);
    let opt = Policy::prepare(CsiRegime::CellFreeLocal, &model, &clusters, &p, &[], &team).unwrap();
    let base: Vec<Vec<CVec>> = (0..2).map(|k| opt.coefficients(k).unwrap().to_vec()).collect();

    let mut rng = stream(4, &[]);
    let mut rules = vec![opt.clone()];
    for _ in 0..20 {
        let mut coeffs = base.clone();
        let k = rng.random_range(0..2);
        let mut delta: Vec<CVec> = coeffs[k].iter().map(|v| cn_vector(&mut rng, v.len())).collect();
        let norm = delta.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
        for (v, d) in coeffs[k].iter_mut().zip(&mut delta) {
            *v += &*d * c(1e-3 / norm, 0.0);
        }
        rules.push(opt.with_coefficients(coeffs).unwrap());
    }
    let refs: Vec<&dyn Beamforming> = rules.iter().map(|r| r as &dyn Beamforming).collect();
    let m = estimate_moments_many(&refs, &model, &EvalConfig::new(40_000, 5, 0)).unwrap();
    for k in 0..2 {
        let best = m[0].mse(k);
        for alt in &m[1..] {
            let e = alt.mse(k);
            assert!(
                e.value >= best.value - 3.0 * combined_std_err(e.std_err, best.std_err),
                "user {k}: {} < {}",
                e.value,
                best.value
            );
        }
    }
}

#[test]
fn mixed_with_nothing_shared_matches_local_on_a_drop() {
    let s = Scenario::desk();
    let dep = place_network(&s, &mut stream(8, &[1])).unwrap();
    let model = PilotNetwork::from_deployment(&dep, &s).unwrap();
    let p = fractional_power(&dep.gains, &dep.clusters, s.max_user_power(), Direction::Uplink).unwrap();
    let mut team = TeamConfig::new(2000, 9, s.num_aps);
    let local = Policy::prepare(CsiRegime::CellFreeLocal, &model, &dep.clusters, &p, &[], &team).unwrap();
    team.shared = vec![false; s.num_aps];
    let mixed = Policy::prepare(CsiRegime::CellFreeMixed, &model, &dep.clusters, &p, &[], &team).unwrap();
    for i in 0..5 {
        let r = cfmimo::model::CsiModel::draw(&model, 10, &[i]);
        let a = local.beamformers(&r).unwrap();
        let b = mixed.beamformers(&r).unwrap();
        for k in 0..s.num_users {
            assert!((a.dense(k) - b.dense(k)).norm() <= 1e-9 * a.dense(k).norm().max(1.0));
        }
    }
}

#[test]
fn more_shared_information_never_hurts_on_average() {
    let s = Scenario::desk();
    let dep = place_network(&s, &mut stream(8, &[2])).unwrap();
    let model = PilotNetwork::from_deployment(&dep, &s).unwrap();
    let p = fractional_power(&dep.gains, &dep.clusters, s.max_user_power(), Direction::Uplink).unwrap();
    let team = TeamConfig::new(5000, 9, s.num_aps);
    let eval = EvalConfig::new(5000, 11, 0);
    let mse = |regime| {
        let pol = Policy::prepare(regime, &model, &dep.clusters, &p, &[], &team).unwrap();
        estimate_moments(&pol, &model, &eval).unwrap()
    };
    let (loc, mix, cen) = (
        mse(CsiRegime::CellFreeLocal),
        mse(CsiRegime::CellFreeMixed),
        mse(CsiRegime::CellFreeCentralized),
    );
    for k in 0..s.num_users {
        let (a, b, d) = (loc.mse(k), mix.mse(k), cen.mse(k));
        assert!(b.value <= a.value + 3.0 * combined_std_err(a.std_err, b.std_err), "user {k}");
        assert!(d.value <= b.value + 3.0 * combined_std_err(b.std_err, d.std_err), "user {k}");
    }
}
