//! Spatial covariances and circularly symmetric Rayleigh channel draws.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cn_scalar, cn_vector, hermitian_defect, hermitian_eigenvalues, hermitian_sqrt, CMat, C64};
use crate::netgen::{Deployment, Scenario};

/// Per-link covariances `R[l][k]` and their square roots.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    num_aps: usize,
    num_users: usize,
    antennas: usize,
    r: Vec<CMat>,
    sqrt: Vec<CMat>,
    /// Square-root diagonals of the links whose covariance is diagonal.
    sqrt_diag: Vec<Option<Vec<f64>>>,
}

fn real_diagonal(m: &CMat) -> Option<Vec<f64>> {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            let z = m[(i, j)];
            if (i != j && z != C64::new(0.0, 0.0)) || z.im != 0.0 {
                return None;
            }
        }
    }
    Some((0..n).map(|i| m[(i, i)].re).collect())
}

impl CovarianceSet {
    /// Validates and factorizes the given covariances, indexed `[l][k]`.
    pub fn new(r: Vec<Vec<CMat>>) -> Result<Self> {
        let num_aps = r.len();
        let num_users = r.first().map_or(0, |row| row.len());
        let antennas = r
            .first()
            .and_then(|row| row.first())
            .map_or(0, |m| m.nrows());
        let mut flat = Vec::with_capacity(num_aps * num_users);
        for row in r {
            if row.len() != num_users {
                return Err(Error::Dimension("ragged covariance table".into()));
            }
            for m in row {
                if m.nrows() != antennas || m.ncols() != antennas {
                    return Err(Error::Dimension(format!(
                        "covariance of size {}x{}, expected {antennas}x{antennas}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if hermitian_defect(&m) > 1e-12 {
                    return Err(Error::Domain("covariance is not Hermitian".into()));
                }
                let trace: f64 = (0..antennas).map(|i| m[(i, i)].re).sum();
                if let Some(&min) = hermitian_eigenvalues(&m).first() {
                    if min < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
                        return Err(Error::Domain("covariance is not PSD".into()));
                    }
                }
                flat.push(m);
            }
        }
        let sqrt = flat.iter().map(hermitian_sqrt).collect::<Result<Vec<_>>>()?;
        let sqrt_diag = sqrt.iter().map(real_diagonal).collect();
        Ok(Self {
            num_aps,
            num_users,
            antennas,
            r: flat,
            sqrt,
            sqrt_diag,
        })
    }

    /// `R[l][k] = gains[l,k] I_N`.
    pub fn diagonal(gains: &nalgebra::DMatrix<f64>, antennas: usize) -> Result<Self> {
        if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::Domain("gains must be finite and nonnegative".into()));
        }
        let r = (0..gains.nrows())
            .map(|l| {
                (0..gains.ncols())
                    .map(|k| CMat::identity(antennas, antennas) * C64::new(gains[(l, k)], 0.0))
                    .collect()
            })
            .collect();
        Self::new(r)
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn get(&self, l: usize, k: usize) -> &CMat {
        &self.r[l * self.num_users + k]
    }

    pub fn sqrt(&self, l: usize, k: usize) -> &CMat {
        &self.sqrt[l * self.num_users + k]
    }
}

pub fn build_covariances(deployment: &Deployment, scenario: &Scenario) -> Result<CovarianceSet> {
    CovarianceSet::diagonal(&deployment.gains, scenario.antennas_per_ap)
}

/// One channel draw, stored as per-AP blocks `H_l` of size `N x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub blocks: Vec<CMat>,
}

impl ChannelSample {
    /// Stacked `(N L) x K` channel matrix.
    pub fn stacked(&self) -> CMat {
        let n = self.blocks.first().map_or(0, |b| b.nrows());
        let k = self.blocks.first().map_or(0, |b| b.ncols());
        let mut out = CMat::zeros(n * self.blocks.len(), k);
        for (l, b) in self.blocks.iter().enumerate() {
            out.view_mut((l * n, 0), (n, k)).copy_from(b);
        }
        out
    }
}

/// Draws the channels of all users at AP `l`.
pub fn sample_ap_channel<R: Rng + ?Sized>(cov: &CovarianceSet, l: usize, rng: &mut R) -> CMat {
    let n = cov.antennas();
    let mut h = CMat::zeros(n, cov.num_users());
    for k in 0..cov.num_users() {
        match &cov.sqrt_diag[l * cov.num_users() + k] {
            Some(d) => {
                for (i, s) in d.iter().enumerate() {
                    h[(i, k)] = cn_scalar(rng) * *s;
                }
            }
            None => {
                let w = cn_vector(rng, n);
                h.set_column(k, &(cov.sqrt(l, k) * w));
            }
        }
    }
    h
}

pub fn sample_channel<R: Rng + ?Sized>(cov: &CovarianceSet, rng: &mut R) -> ChannelSample {
    ChannelSample {
        blocks: (0..cov.num_aps())
            .map(|l| sample_ap_channel(cov, l, rng))
            .collect(),
    }
}
