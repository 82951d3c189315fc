//! Uplink pilot observations and linear MMSE channel estimation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fading::{ChannelSample, CovarianceSet};
use crate::linalg::{c, cn_matrix, hpd_solve, CMat, CVec, C64};
use crate::netgen::{copilot_sets, Deployment, Scenario};

#[derive(Debug, Clone)]
pub struct PilotConfig {
    /// `tau x tau` codebook with orthogonal columns of squared norm `tau`.
    pub phi: CMat,
    pub pilot_power: Vec<f64>,
    pub pilot_of: Vec<usize>,
    pub copilot_sets: Vec<Vec<usize>>,
}

/// `sqrt(tau)` times the unitary DFT matrix.
pub fn dft_codebook(tau: usize) -> CMat {
    CMat::from_fn(tau, tau, |m, n| {
        let angle = -2.0 * std::f64::consts::PI * (m * n) as f64 / tau as f64;
        C64::from_polar(1.0, angle)
    })
}

pub fn identity_codebook(tau: usize) -> CMat {
    CMat::identity(tau, tau) * c((tau as f64).sqrt(), 0.0)
}

impl PilotConfig {
    pub fn new(phi: CMat, pilot_power: Vec<f64>, pilot_of: Vec<usize>) -> Result<Self> {
        let tau = phi.nrows();
        if phi.ncols() != tau || tau == 0 {
            return Err(Error::Dimension("pilot codebook must be square".into()));
        }
        let gram = phi.adjoint() * &phi;
        let defect = (gram - CMat::identity(tau, tau) * c(tau as f64, 0.0))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if defect > 1e-10 * tau as f64 {
            return Err(Error::Domain("pilot codebook is not orthogonal".into()));
        }
        if pilot_power.len() != pilot_of.len() {
            return Err(Error::Dimension("pilot power and assignment lengths differ".into()));
        }
        if pilot_power.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("pilot powers must be finite and nonnegative".into()));
        }
        if pilot_of.iter().any(|&t| t >= tau) {
            return Err(Error::Dimension("pilot index outside the codebook".into()));
        }
        let copilot_sets = copilot_sets(&pilot_of);
        Ok(Self {
            phi,
            pilot_power,
            pilot_of,
            copilot_sets,
        })
    }

    /// DFT codebook, equal pilot powers from the scenario.
    pub fn from_deployment(deployment: &Deployment, scenario: &Scenario) -> Result<Self> {
        Self::new(
            dft_codebook(scenario.pilot_len),
            vec![scenario.pilot_power(); deployment.num_users()],
            deployment.pilot_of.clone(),
        )
    }

    pub fn tau(&self) -> usize {
        self.phi.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.pilot_of.len()
    }
}

/// Received pilot matrices `Y_l`, one `N x tau` block per AP.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub y: Vec<CMat>,
}

fn pilot_signal(h: &ChannelSample, cfg: &PilotConfig) -> Vec<CMat> {
    h.blocks
        .iter()
        .map(|hl| {
            let mut y = CMat::zeros(hl.nrows(), cfg.tau());
            for k in 0..cfg.num_users() {
                let amp = c(cfg.pilot_power[k].sqrt(), 0.0);
                let phi = cfg.phi.column(cfg.pilot_of[k]);
                y += hl.column(k) * phi.adjoint() * amp;
            }
            y
        })
        .collect()
}

pub fn observe_pilots<R: Rng + ?Sized>(
    h: &ChannelSample,
    cfg: &PilotConfig,
    rng: &mut R,
) -> PilotObservation {
    let mut y = pilot_signal(h, cfg);
    for yl in &mut y {
        *yl += cn_matrix(rng, yl.nrows(), yl.ncols());
    }
    PilotObservation { y }
}

/// Observation without receiver noise.
pub fn observe_pilots_noiseless(h: &ChannelSample, cfg: &PilotConfig) -> PilotObservation {
    PilotObservation {
        y: pilot_signal(h, cfg),
    }
}

/// `Y_l phi / sqrt(tau)`.
pub fn decorrelate(y: &CMat, phi: &CVec) -> CVec {
    y * phi * c(1.0 / (phi.len() as f64).sqrt(), 0.0)
}

/// Deterministic part of the estimator: per-link filters and error
/// covariances.
#[derive(Debug, Clone)]
pub struct Estimator {
    num_users: usize,
    filters: Vec<CMat>,
    /// Diagonals of the filters that are real diagonal matrices.
    filter_diag: Vec<Option<Vec<f64>>>,
    err_cov: Vec<CMat>,
}

fn real_diagonal(m: &CMat) -> Option<Vec<f64>> {
    let n = m.nrows();
    let diagonal = (0..n).all(|j| {
        (0..n).all(|i| {
            let z = m[(i, j)];
            z.im == 0.0 && (i == j || z.re == 0.0)
        })
    });
    diagonal.then(|| (0..n).map(|i| m[(i, i)].re).collect())
}

impl Estimator {
    pub fn new(cov: &CovarianceSet, cfg: &PilotConfig) -> Result<Self> {
        if cov.num_users() != cfg.num_users() {
            return Err(Error::Dimension(format!(
                "{} users in covariances, {} in pilot config",
                cov.num_users(),
                cfg.num_users()
            )));
        }
        let n = cov.antennas();
        let k_users = cov.num_users();
        let tau = cfg.tau() as f64;
        let mut filters = Vec::with_capacity(cov.num_aps() * k_users);
        let mut err_cov = Vec::with_capacity(cov.num_aps() * k_users);
        for l in 0..cov.num_aps() {
            for j in 0..k_users {
                let mut q = CMat::identity(n, n);
                for &i in &cfg.copilot_sets[j] {
                    q += cov.get(l, i) * c(tau * cfg.pilot_power[i], 0.0);
                }
                let r = cov.get(l, j);
                // R Q^{-1} = (Q^{-1} R)^H since both are Hermitian.
                let rq = hpd_solve(&q, r)?.adjoint();
                let gain = (tau * cfg.pilot_power[j]).sqrt();
                let mut e = r - &rq * r * c(gain * gain, 0.0);
                e = (&e + e.adjoint()) * c(0.5, 0.0);
                filters.push(rq * c(gain, 0.0));
                err_cov.push(e);
            }
        }
        let filter_diag = filters.iter().map(real_diagonal).collect();
        Ok(Self {
            num_users: k_users,
            filters,
            filter_diag,
            err_cov,
        })
    }

    pub fn filter(&self, l: usize, j: usize) -> &CMat {
        &self.filters[l * self.num_users + j]
    }

    pub fn err_cov(&self, l: usize, j: usize) -> &CMat {
        &self.err_cov[l * self.num_users + j]
    }

    /// Estimates at AP `l` from decorrelated observations, one per pilot.
    pub fn estimate_ap(&self, l: usize, y_by_pilot: &[CVec], pilot_of: &[usize]) -> CMat {
        let n = y_by_pilot.first().map_or(0, |y| y.len());
        let mut hhat = CMat::zeros(n, self.num_users);
        for j in 0..self.num_users {
            let y = &y_by_pilot[pilot_of[j]];
            match &self.filter_diag[l * self.num_users + j] {
                Some(d) => {
                    for (i, s) in d.iter().enumerate() {
                        hhat[(i, j)] = y[i] * *s;
                    }
                }
                None => hhat.set_column(j, &(self.filter(l, j) * y)),
            }
        }
        hhat
    }
}

#[derive(Debug, Clone)]
pub struct EstimateSet {
    /// Stacked estimates `[hhat_l1 .. hhat_lK]`, one `N x K` block per AP.
    pub hhat: Vec<CMat>,
    pub err_cov: Vec<Vec<CMat>>,
}

impl EstimateSet {
    pub fn hhat(&self, l: usize, j: usize) -> CVec {
        self.hhat[l].column(j).into_owned()
    }
}

pub fn estimate_channels(
    obs: &PilotObservation,
    cov: &CovarianceSet,
    cfg: &PilotConfig,
) -> Result<EstimateSet> {
    if obs.y.len() != cov.num_aps() {
        return Err(Error::Dimension("observation/AP count mismatch".into()));
    }
    let est = Estimator::new(cov, cfg)?;
    let mut hhat = Vec::with_capacity(cov.num_aps());
    for (l, yl) in obs.y.iter().enumerate() {
        if yl.nrows() != cov.antennas() || yl.ncols() != cfg.tau() {
            return Err(Error::Dimension("observation block has wrong shape".into()));
        }
        let y_by_pilot: Vec<CVec> = (0..cfg.tau())
            .map(|t| decorrelate(yl, &cfg.phi.column(t).into_owned()))
            .collect();
        hhat.push(est.estimate_ap(l, &y_by_pilot, &cfg.pilot_of));
    }
    let err_cov = (0..cov.num_aps())
        .map(|l| (0..cov.num_users()).map(|j| est.err_cov(l, j).clone()).collect())
        .collect();
    Ok(EstimateSet { hhat, err_cov })
}

/// `Psi_l = sum_j p_j C_{l,j}`.
pub fn aggregate_error_cov(err_cov_l: &[CMat], p: &[f64]) -> CMat {
    let n = err_cov_l.first().map_or(0, |m| m.nrows());
    let mut psi = CMat::zeros(n, n);
    for (e, &pj) in err_cov_l.iter().zip(p) {
        if pj != 0.0 {
            psi += e * c(pj, 0.0);
        }
    }
    psi
}
