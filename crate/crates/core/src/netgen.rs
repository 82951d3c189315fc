//! Scenario configuration, network deployment and large-scale fading.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path-loss model constants for a 2 GHz carrier.
const PATHLOSS_SLOPE_DB: f64 = 36.7;
const PATHLOSS_OFFSET_DB: f64 = 30.5;
/// Thermal noise density in dBm/Hz.
const NOISE_DENSITY_DBM_HZ: f64 = -174.0;
const SHADOW_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CsiRegime {
    /// One serving AP per user, local pilots only.
    MultiCell,
    /// Cell-free clusters, no CSI sharing: local team MMSE.
    CellFreeLocal,
    /// Cell-free clusters, full CSI sharing: centralized MMSE.
    CellFreeCentralized,
    /// Cell-free clusters with common CSI from a shared AP subset.
    CellFreeMixed,
}

impl CsiRegime {
    pub fn label(self) -> &'static str {
        match self {
            CsiRegime::MultiCell => "multicell",
            CsiRegime::CellFreeLocal => "local",
            CsiRegime::CellFreeCentralized => "centralized",
            CsiRegime::CellFreeMixed => "mixed",
        }
    }

    pub fn is_cell_free(self) -> bool {
        !matches!(self, CsiRegime::MultiCell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "area_side_m")]
    pub area_side: f64,
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    #[serde(rename = "height_diff_m")]
    pub height_diff: f64,
    pub shadow_std_db: f64,
    #[serde(rename = "shadow_decorr_m")]
    pub shadow_decorr: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub pilot_len: usize,
    pub pilot_power_dbm: f64,
    pub max_user_power_dbm: f64,
    pub cluster_size: usize,
    pub csi_regime: CsiRegime,
}

impl Scenario {
    /// The full-size setup: 16 APs with 8 antennas serving 32 users in a
    /// 500 m square.
    pub fn full_scale() -> Self {
        Self {
            area_side: 500.0,
            num_aps: 16,
            antennas_per_ap: 8,
            num_users: 32,
            height_diff: 10.0,
            shadow_std_db: 4.0,
            shadow_decorr: 9.0,
            bandwidth_hz: 20e6,
            noise_figure_db: 7.0,
            pilot_len: 10,
            pilot_power_dbm: 20.0,
            max_user_power_dbm: 20.0,
            cluster_size: 4,
            csi_regime: CsiRegime::CellFreeCentralized,
        }
    }

    /// Reduced setup used for quick runs and property checks.
    pub fn desk() -> Self {
        Self {
            area_side: 250.0,
            num_aps: 4,
            antennas_per_ap: 2,
            num_users: 8,
            pilot_len: 4,
            cluster_size: 2,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, f: &str| {
            if v == 0 {
                Err(Error::config(f, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive(self.num_aps, "num_aps")?;
        positive(self.antennas_per_ap, "antennas_per_ap")?;
        positive(self.num_users, "num_users")?;
        positive(self.pilot_len, "pilot_len")?;
        positive(self.cluster_size, "cluster_size")?;
        if self.cluster_size > self.num_aps {
            return Err(Error::config("cluster_size", "must not exceed num_aps"));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(Error::config("area_side_m", "must be positive"));
        }
        if !(self.shadow_std_db >= 0.0) {
            return Err(Error::config("shadow_std_db", "must be nonnegative"));
        }
        if !(self.shadow_decorr > 0.0) {
            return Err(Error::config("shadow_decorr_m", "must be positive"));
        }
        if !(self.height_diff >= 0.0) {
            return Err(Error::config("height_diff_m", "must be nonnegative"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("bandwidth_hz", "must be positive"));
        }
        for (v, f) in [
            (self.noise_figure_db, "noise_figure_db"),
            (self.pilot_power_dbm, "pilot_power_dbm"),
            (self.max_user_power_dbm, "max_user_power_dbm"),
        ] {
            if !v.is_finite() {
                return Err(Error::config(f, "must be finite"));
            }
        }
        grid_side(self.num_aps)?;
        Ok(())
    }

    /// Noise power in dBm.
    pub fn noise_power_dbm(&self) -> f64 {
        NOISE_DENSITY_DBM_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Pilot power, linear in mW (gains already carry the 1/noise factor).
    pub fn pilot_power(&self) -> f64 {
        dbm_to_mw(self.pilot_power_dbm)
    }

    pub fn max_user_power(&self) -> f64 {
        dbm_to_mw(self.max_user_power_dbm)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Keys accepted in a configuration document.
pub const CONFIG_KEYS: [&str; 17] = [
    "area_side_m",
    "num_aps",
    "antennas_per_ap",
    "num_users",
    "height_diff_m",
    "shadow_std_db",
    "shadow_decorr_m",
    "bandwidth_hz",
    "noise_figure_db",
    "pilot_len",
    "pilot_power_dbm",
    "max_user_power_dbm",
    "cluster_size",
    "csi_regime",
    "master_seed",
    "num_drops",
    "num_samples",
];

/// A scenario plus the run parameters, as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub master_seed: u64,
    pub num_drops: usize,
    pub num_samples: usize,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("<document>", "expected a JSON object"))?;
        for key in obj.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::config(key.clone(), "unknown key"));
            }
        }
        for key in CONFIG_KEYS {
            if !obj.contains_key(key) {
                return Err(Error::config(key, "missing key"));
            }
        }
        for key in CONFIG_KEYS {
            let mut single = serde_json::Map::new();
            single.insert(key.to_string(), obj[key].clone());
            check_field_type(key, &obj[key])?;
        }
        let cfg: ScenarioConfig = serde_json::from_value(value)
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.num_drops == 0 {
            return Err(Error::config("num_drops", "must be at least 1"));
        }
        if self.num_samples < 2 {
            return Err(Error::config("num_samples", "must be at least 2"));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_field_type(key: &str, v: &serde_json::Value) -> Result<()> {
    let ok = match key {
        "csi_regime" => v
            .as_str()
            .map(|s| {
                ["MultiCell", "CellFreeLocal", "CellFreeCentralized", "CellFreeMixed"].contains(&s)
            })
            .unwrap_or(false),
        "num_aps" | "antennas_per_ap" | "num_users" | "pilot_len" | "cluster_size"
        | "master_seed" | "num_drops" | "num_samples" => v.is_u64(),
        _ => v.is_number(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, format!("invalid value {v}")))
    }
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// Noise-normalized linear gains, `num_aps x num_users`.
    pub gains: DMatrix<f64>,
    pub pilot_of: Vec<usize>,
    /// Users sharing each user's pilot, including the user itself.
    pub copilot_sets: Vec<Vec<usize>>,
    /// Serving AP sets, sorted ascending.
    pub clusters: Vec<Vec<usize>>,
    pub cell_of: Vec<usize>,
}

impl Deployment {
    pub fn num_aps(&self) -> usize {
        self.gains.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.gains.ncols()
    }

    /// Builds a deployment from explicit gains, deriving cells, pilots and
    /// clusters. Positions are left empty.
    pub fn from_gains(gains: DMatrix<f64>, scenario: &Scenario) -> Result<Self> {
        if gains.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::Domain("gains must be finite and positive".into()));
        }
        let cell_of = strongest_aps(&gains);
        let pilot_of = assign_pilots(&cell_of, scenario.pilot_len);
        let copilot_sets = copilot_sets(&pilot_of);
        let clusters = select_clusters(&gains, scenario.csi_regime, scenario.cluster_size);
        Ok(Self {
            ap_positions: Vec::new(),
            user_positions: Vec::new(),
            gains,
            pilot_of,
            copilot_sets,
            clusters,
            cell_of,
        })
    }

    /// Clusters of a regime other than the deployment's own.
    pub fn clusters_for(&self, regime: CsiRegime, cluster_size: usize) -> Vec<Vec<usize>> {
        select_clusters(&self.gains, regime, cluster_size)
    }
}

/// Noise-normalized channel gain in dB at 3-D distance `distance`.
pub fn channel_gain_db(distance: f64, shadow: f64, scenario: &Scenario) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    Ok(-PATHLOSS_SLOPE_DB * distance.log10() - PATHLOSS_OFFSET_DB + shadow
        - scenario.noise_power_dbm())
}

fn grid_side(num_aps: usize) -> Result<usize> {
    let side = (num_aps as f64).sqrt().round() as usize;
    if side * side != num_aps {
        return Err(Error::config(
            "num_aps",
            format!("{num_aps} is not a perfect square, required by the regular AP grid"),
        ));
    }
    Ok(side)
}

/// APs on a uniform `sqrt(L) x sqrt(L)` grid centered in the area, indexed
/// row-major.
pub fn ap_grid(scenario: &Scenario) -> Result<Vec<Point>> {
    let side = grid_side(scenario.num_aps)?;
    let spacing = scenario.area_side / side as f64;
    Ok((0..side)
        .flat_map(|row| {
            (0..side).map(move |col| {
                [
                    (col as f64 + 0.5) * spacing,
                    (row as f64 + 0.5) * spacing,
                ]
            })
        })
        .collect())
}

fn dist2(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Spatially correlated log-normal shadowing in dB, `num_aps x num_users`.
/// Independent across APs; across users the covariance is
/// `std^2 * 2^(-distance / decorrelation)`.
pub fn sample_shadowing<R: Rng + ?Sized>(
    user_positions: &[Point],
    scenario: &Scenario,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let k = user_positions.len();
    let l = scenario.num_aps;
    if scenario.shadow_std_db < 0.0 {
        return Err(Error::Domain("negative shadowing deviation".into()));
    }
    if scenario.shadow_std_db == 0.0 || k == 0 {
        return Ok(DMatrix::zeros(l, k));
    }
    let factor = shadow_factor(user_positions, scenario)?;
    let mut out = DMatrix::zeros(l, k);
    for ap in 0..l {
        let w = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &factor * w;
        out.row_mut(ap).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Symmetric PSD factor `F` with `F F^T` equal to the shadowing covariance.
pub fn shadow_factor(user_positions: &[Point], scenario: &Scenario) -> Result<DMatrix<f64>> {
    let k = user_positions.len();
    let var = scenario.shadow_std_db.powi(2);
    let cov = DMatrix::from_fn(k, k, |i, j| {
        let d = dist2(&user_positions[i], &user_positions[j]);
        var * 2f64.powf(-d / scenario.shadow_decorr) + if i == j { SHADOW_JITTER } else { 0.0 }
    });
    let eig = cov.symmetric_eigen();
    let tol = 1e-10 * var * k as f64;
    if eig.eigenvalues.iter().any(|&e| e < -tol || !e.is_finite()) {
        return Err(Error::Factorization(
            "shadowing covariance is not positive semidefinite".into(),
        ));
    }
    let sqrt_d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt_d * eig.eigenvectors.transpose())
}

/// Index of the strongest AP per user; ties go to the lowest index.
pub fn strongest_aps(gains: &DMatrix<f64>) -> Vec<usize> {
    (0..gains.ncols())
        .map(|k| {
            let mut best = 0;
            for l in 1..gains.nrows() {
                if gains[(l, k)] > gains[(best, k)] {
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Round-robin pilots per cell: users of each cell, in index order, cycle
/// through `0..pilot_len` starting at 0.
pub fn assign_pilots(cell_of: &[usize], pilot_len: usize) -> Vec<usize> {
    let cells = cell_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut next = vec![0usize; cells];
    cell_of
        .iter()
        .map(|&cell| {
            let p = next[cell] % pilot_len;
            next[cell] += 1;
            p
        })
        .collect()
}

pub fn copilot_sets(pilot_of: &[usize]) -> Vec<Vec<usize>> {
    pilot_of
        .iter()
        .map(|&p| {
            pilot_of
                .iter()
                .enumerate()
                .filter(|(_, &q)| q == p)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Serving clusters: the strongest AP in the multi-cell regime, the
/// `cluster_size` strongest otherwise (ties to the lowest index).
pub fn select_clusters(
    gains: &DMatrix<f64>,
    regime: CsiRegime,
    cluster_size: usize,
) -> Vec<Vec<usize>> {
    let size = if regime.is_cell_free() {
        cluster_size.min(gains.nrows())
    } else {
        1
    };
    (0..gains.ncols())
        .map(|k| {
            let mut order: Vec<usize> = (0..gains.nrows()).collect();
            order.sort_by(|&a, &b| {
                gains[(b, k)]
                    .partial_cmp(&gains[(a, k)])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut c: Vec<usize> = order.into_iter().take(size).collect();
            c.sort_unstable();
            c
        })
        .collect()
}

/// Generates one drop: AP grid, uniform users, correlated shadowing,
/// gains, cells, pilots and clusters.
pub fn place_network<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Deployment> {
    scenario.validate()?;
    let ap_positions = ap_grid(scenario)?;
    let user_positions: Vec<Point> = (0..scenario.num_users)
        .map(|_| {
            [
                rng.random::<f64>() * scenario.area_side,
                rng.random::<f64>() * scenario.area_side,
            ]
        })
        .collect();
    let shadow = sample_shadowing(&user_positions, scenario, rng)?;
    let mut gains = DMatrix::zeros(scenario.num_aps, scenario.num_users);
    for l in 0..scenario.num_aps {
        for k in 0..scenario.num_users {
            let planar = dist2(&ap_positions[l], &user_positions[k]);
            let d = (planar * planar + scenario.height_diff * scenario.height_diff).sqrt();
            // Co-located AP/user with no height gap: keep the 1 m reference.
            let d = d.max(1e-3);
            let db = channel_gain_db(d, shadow[(l, k)], scenario)?;
            gains[(l, k)] = 10f64.powf(db / 10.0);
        }
    }
    let mut dep = Deployment::from_gains(gains, scenario)?;
    dep.ap_positions = ap_positions;
    dep.user_positions = user_positions;
    Ok(dep)
}
