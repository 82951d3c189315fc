//! Uplink/downlink duality for the hardening and coherent bounds.
//!
//! With `D = diag(|E h_k^H v_k|^2)`, `B[j][k] = E|h_j^H v_k|^2 - D` on the
//! diagonal, `Sigma = diag(E|v_k|^2)` and targets `Gamma`, the uplink and
//! downlink powers achieving the targets are
//! `p_ul = (D Gamma^-1 - B^T)^-1 Sigma 1` and `p_dl = (D Gamma^-1 - B)^-1 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::beamform::BeamformerSet;
use crate::error::{Error, Result};
use crate::linalg::{quad_form, spectral_radius};
use crate::model::{CsiModel, Realization};
use crate::rates::MomentSet;

/// Solves only proceed below this spectral radius.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrices {
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<f64>,
    #[serde(rename = "Gamma")]
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPair {
    pub p_ul: Vec<f64>,
    pub p_dl: Vec<f64>,
    pub spectral_radius: f64,
}

impl CouplingMatrices {
    pub fn num_users(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.d.len();
        if self.sigma.len() != k || self.gamma.len() != k || self.b.len() != k {
            return Err(Error::Dimension("coupling matrices have different sizes".into()));
        }
        if self.b.iter().any(|row| row.len() != k) {
            return Err(Error::Dimension("B must be square".into()));
        }
        let finite_nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if !self.d.iter().all(finite_nonneg) {
            return Err(Error::Domain("D must be nonnegative".into()));
        }
        if !self.sigma.iter().all(finite_nonneg) {
            return Err(Error::Domain("Sigma must be nonnegative".into()));
        }
        if !self.gamma.iter().all(finite_nonneg) {
            return Err(Error::Domain("Gamma must be nonnegative".into()));
        }
        let scale = self.b.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
        if self.b.iter().flatten().any(|v| !v.is_finite() || *v < -NEGATIVE_TOL * scale) {
            return Err(Error::Domain("B must be elementwise nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn with_targets(&self, gamma: Vec<f64>) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    fn active(&self) -> Vec<usize> {
        (0..self.num_users()).filter(|&k| self.gamma[k] > 0.0).collect()
    }

    /// Downlink hardening SINRs for powers `p_dl`.
    pub fn downlink_sinr(&self, p_dl: &[f64]) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| {
                let num = self.d[k] * p_dl[k];
                let den: f64 = (0..self.num_users()).map(|j| self.b[k][j] * p_dl[j]).sum::<f64>() + 1.0;
                num / den
            })
            .collect()
    }

    /// Uplink hardening SINRs for powers `p_ul`.
    pub fn uplink_sinr(&self, p_ul: &[f64]) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| {
                let num = self.d[k] * p_ul[k];
                let den: f64 =
                    (0..self.num_users()).map(|j| self.b[j][k] * p_ul[j]).sum::<f64>() + self.sigma[k];
                if num == 0.0 {
                    0.0
                } else {
                    num / den
                }
            })
            .collect()
    }
}

/// Coupling from a moment table; `Sigma` uses the table's weighted norm.
pub fn build_coupling(m: &MomentSet, gamma: &[f64]) -> CouplingMatrices {
    let k = m.num_users();
    let d: Vec<f64> = (0..k).map(|i| m.mean_inner(i, i).norm_sqr()).collect();
    let b = (0..k)
        .map(|j| {
            (0..k)
                .map(|i| m.second_inner(j, i) - if i == j { d[i] } else { 0.0 })
                .collect()
        })
        .collect();
    CouplingMatrices {
        d,
        b,
        sigma: (0..k).map(|i| m.power_v(i)).collect(),
        gamma: gamma.to_vec(),
    }
}

/// Spectral radius of `D^-1 Gamma B^T` over the users with positive
/// targets. Infinite when such a user has `D = 0`.
pub fn check_feasibility(c: &CouplingMatrices) -> Result<f64> {
    c.validate()?;
    let active = c.active();
    if active.iter().any(|&k| c.d[k] <= 0.0) {
        return Ok(f64::INFINITY);
    }
    let n = active.len();
    let m = DMatrix::from_fn(n, n, |a, b| {
        let (i, j) = (active[a], active[b]);
        c.gamma[i] / c.d[i] * c.b[j][i]
    });
    Ok(spectral_radius(&m))
}

fn clamp_nonneg(x: DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if x.iter().any(|v| !v.is_finite() || *v < -NEGATIVE_TOL * scale) {
        return Err(Error::Domain(format!("{what} powers came out negative")));
    }
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

pub fn solve_power_pair(c: &CouplingMatrices) -> Result<PowerPair> {
    let rho = check_feasibility(c)?;
    if !(rho < 1.0 - FEASIBILITY_MARGIN) {
        return Err(Error::Infeasible {
            spectral_radius: rho,
            realization: None,
        });
    }
    let active = c.active();
    let n = active.len();
    let k = c.num_users();
    let mut p_ul = vec![0.0; k];
    let mut p_dl = vec![0.0; k];
    if n > 0 {
        let a = DMatrix::from_fn(n, n, |x, y| {
            let (i, j) = (active[x], active[y]);
            (if x == y { c.d[i] / c.gamma[i] } else { 0.0 }) - c.b[i][j]
        });
        let at = a.transpose();
        let singular = || Error::Singular {
            rcond: 0.0,
            context: "duality power system".into(),
        };
        let ones = DVector::from_element(n, 1.0);
        let sig = DVector::from_fn(n, |x, _| c.sigma[active[x]]);
        let dl = a.clone().lu().solve(&ones).ok_or_else(singular)?;
        let ul = at.lu().solve(&sig).ok_or_else(singular)?;
        let dl = clamp_nonneg(dl, "downlink")?;
        let ul = clamp_nonneg(ul, "uplink")?;
        for (x, &i) in active.iter().enumerate() {
            p_dl[i] = dl[x];
            p_ul[i] = ul[x];
        }
    }
    Ok(PowerPair {
        p_ul,
        p_dl,
        spectral_radius: rho,
    })
}

/// `|1^T p_ul - 1^T Sigma p_dl|` relative to the larger side.
pub fn conservation_gap(c: &CouplingMatrices, pair: &PowerPair) -> f64 {
    let ul: f64 = pair.p_ul.iter().sum();
    let dl: f64 = pair.p_dl.iter().zip(&c.sigma).map(|(p, s)| p * s).sum();
    let scale = ul.abs().max(dl.abs());
    if scale == 0.0 {
        0.0
    } else {
        (ul - dl).abs() / scale
    }
}

/// Coupling conditioned on the pilot observations of one realization:
/// `D_k = |hhat_k^H v_k|^2`, `B[j][k] = |hhat_j^H v_k|^2 + v_k^H C_j v_k - D`,
/// `Sigma_k = |v_k|^2`.
pub fn conditional_coupling(
    bf: &BeamformerSet,
    r: &Realization,
    model: &dyn CsiModel,
    gamma: &[f64],
) -> CouplingMatrices {
    let k = bf.num_users();
    let mut d = vec![0.0; k];
    let mut b = vec![vec![0.0; k]; k];
    for i in 0..k {
        let g = bf.gains(r, i, true);
        for j in 0..k {
            let err: f64 = bf.blocks[i]
                .iter()
                .map(|(l, v)| quad_form(model.err_cov(*l, j), v))
                .sum();
            b[j][i] = g[j].norm_sqr() + err;
        }
        d[i] = g[i].norm_sqr();
        b[i][i] -= d[i];
    }
    CouplingMatrices {
        d,
        b,
        sigma: (0..k).map(|i| bf.weighted_power(i, &[])).collect(),
        gamma: gamma.to_vec(),
    }
}

/// Solves the conditional system of one realization, tagging failures
/// with its index.
pub fn coherent_duality(c: &CouplingMatrices, realization: usize) -> Result<PowerPair> {
    solve_power_pair(c).map_err(|e| match e {
        Error::Infeasible { spectral_radius, .. } => Error::Infeasible {
            spectral_radius,
            realization: Some(realization),
        },
        other => other,
    })
}
