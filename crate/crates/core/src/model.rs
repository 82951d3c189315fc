//! Joint sampling of channels and the CSI available at each AP.
//!
//! Every AP owns its own random stream per sample, so the data of one AP can
//! be redrawn without touching the others. Channels of distinct APs are
//! independent, which the nested estimators rely on.

use crate::error::Result;
use crate::fading::{sample_ap_channel, CovarianceSet};
use crate::linalg::{c, cn_vector, CMat, CVec};
use crate::netgen::{Deployment, Scenario};
use crate::pilots::{Estimator, PilotConfig};
use crate::rng::{stream, StreamRng};

/// True channels and estimates seen at one AP, both `N x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApSample {
    pub h: CMat,
    pub hhat: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub aps: Vec<ApSample>,
}

impl Realization {
    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }
}

pub trait CsiModel: Sync {
    fn num_aps(&self) -> usize;
    fn antennas(&self) -> usize;
    fn num_users(&self) -> usize;
    /// Estimation-error covariance of user `j` at AP `l`.
    fn err_cov(&self, l: usize, j: usize) -> &CMat;
    fn draw_ap(&self, l: usize, rng: &mut StreamRng) -> ApSample;

    /// Draws every AP from its own stream `(seed, counters.., l)`.
    fn draw(&self, seed: u64, counters: &[u64]) -> Realization {
        let mut key = counters.to_vec();
        key.push(0);
        let aps = (0..self.num_aps())
            .map(|l| {
                *key.last_mut().unwrap() = l as u64;
                self.draw_ap(l, &mut stream(seed, &key))
            })
            .collect();
        Realization { aps }
    }

    /// `Psi_l = sum_j p_j C_{l,j}`.
    fn psi(&self, l: usize, p: &[f64]) -> CMat {
        let n = self.antennas();
        let mut psi = CMat::zeros(n, n);
        for (j, &pj) in p.iter().enumerate() {
            if pj != 0.0 {
                psi += self.err_cov(l, j) * c(pj, 0.0);
            }
        }
        psi
    }
}

/// Rayleigh channels observed through orthogonal uplink pilots.
#[derive(Debug, Clone)]
pub struct PilotNetwork {
    pub cov: CovarianceSet,
    pub cfg: PilotConfig,
    estimator: Estimator,
}

impl PilotNetwork {
    pub fn new(cov: CovarianceSet, cfg: PilotConfig) -> Result<Self> {
        let estimator = Estimator::new(&cov, &cfg)?;
        Ok(Self {
            cov,
            cfg,
            estimator,
        })
    }

    pub fn from_deployment(deployment: &Deployment, scenario: &Scenario) -> Result<Self> {
        let cov = crate::fading::build_covariances(deployment, scenario)?;
        let cfg = PilotConfig::from_deployment(deployment, scenario)?;
        Self::new(cov, cfg)
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }
}

impl CsiModel for PilotNetwork {
    fn num_aps(&self) -> usize {
        self.cov.num_aps()
    }

    fn antennas(&self) -> usize {
        self.cov.antennas()
    }

    fn num_users(&self) -> usize {
        self.cov.num_users()
    }

    fn err_cov(&self, l: usize, j: usize) -> &CMat {
        self.estimator.err_cov(l, j)
    }

    fn draw_ap(&self, l: usize, rng: &mut StreamRng) -> ApSample {
        let h = sample_ap_channel(&self.cov, l, rng);
        let n = self.antennas();
        let tau = self.cfg.tau() as f64;
        // Decorrelated observations drawn directly: the decorrelator is
        // unitary, so its noise is again CN(0, I).
        let mut y: Vec<CVec> = (0..self.cfg.tau()).map(|_| cn_vector(rng, n)).collect();
        for (i, &t) in self.cfg.pilot_of.iter().enumerate() {
            let amp = (tau * self.cfg.pilot_power[i]).sqrt();
            if amp != 0.0 {
                y[t] += h.column(i) * c(amp, 0.0);
            }
        }
        let hhat = self.estimator.estimate_ap(l, &y, &self.cfg.pilot_of);
        ApSample { h, hhat }
    }
}

/// Rayleigh channels known perfectly at every AP.
#[derive(Debug, Clone)]
pub struct PerfectCsi {
    pub cov: CovarianceSet,
    zero: CMat,
}

impl PerfectCsi {
    pub fn new(cov: CovarianceSet) -> Self {
        let n = cov.antennas();
        Self {
            cov,
            zero: CMat::zeros(n, n),
        }
    }
}

impl CsiModel for PerfectCsi {
    fn num_aps(&self) -> usize {
        self.cov.num_aps()
    }

    fn antennas(&self) -> usize {
        self.cov.antennas()
    }

    fn num_users(&self) -> usize {
        self.cov.num_users()
    }

    fn err_cov(&self, _l: usize, _j: usize) -> &CMat {
        &self.zero
    }

    fn draw_ap(&self, l: usize, rng: &mut StreamRng) -> ApSample {
        let h = sample_ap_channel(&self.cov, l, rng);
        ApSample { hhat: h.clone(), h }
    }
}

/// A deterministic channel, perfectly known.
#[derive(Debug, Clone)]
pub struct FixedChannel {
    pub blocks: Vec<CMat>,
    zero: CMat,
}

impl FixedChannel {
    pub fn new(blocks: Vec<CMat>) -> Self {
        let n = blocks.first().map_or(0, |b| b.nrows());
        Self {
            blocks,
            zero: CMat::zeros(n, n),
        }
    }
}

impl CsiModel for FixedChannel {
    fn num_aps(&self) -> usize {
        self.blocks.len()
    }

    fn antennas(&self) -> usize {
        self.zero.nrows()
    }

    fn num_users(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }

    fn err_cov(&self, _l: usize, _j: usize) -> &CMat {
        &self.zero
    }

    fn draw_ap(&self, l: usize, _rng: &mut StreamRng) -> ApSample {
        ApSample {
            h: self.blocks[l].clone(),
            hhat: self.blocks[l].clone(),
        }
    }
}
