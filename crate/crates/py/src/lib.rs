//! Python bindings for the cfmimo simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use cfmimo::alloc::{fractional_power, Direction};
use cfmimo::beamform::{Policy, TeamConfig};
use cfmimo::bench::{self, ExperimentSpec, PowerPolicy, SchemeSpec};
use cfmimo::duality::{self, CouplingMatrices};
use cfmimo::model::PilotNetwork;
use cfmimo::netgen::{self, CsiRegime};
use cfmimo::rates::{estimate_moments, EvalConfig};
use cfmimo::rng::{derive_key, purpose, stream};
use cfmimo::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Json(_) | Error::Csv(_) | Error::Dimension(_) | Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn parse_regime(name: &str) -> PyResult<CsiRegime> {
    match name {
        "multicell" => Ok(CsiRegime::MultiCell),
        "local" => Ok(CsiRegime::CellFreeLocal),
        "centralized" => Ok(CsiRegime::CellFreeCentralized),
        "mixed" => Ok(CsiRegime::CellFreeMixed),
        other => Err(PyValueError::new_err(format!("unknown CSI regime `{other}`"))),
    }
}

fn parse_power(name: &str) -> PyResult<PowerPolicy> {
    match name {
        "full" => Ok(PowerPolicy::Full),
        "fractional" => Ok(PowerPolicy::Fractional),
        "max-min" | "maxmin" => Ok(PowerPolicy::MaxMin),
        other => Err(PyValueError::new_err(format!("unknown power policy `{other}`"))),
    }
}

/// Network layout and radio parameters.
#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: netgen::Scenario,
}

#[pymethods]
impl PyScenario {
    /// The full-size reference setup.
    #[staticmethod]
    fn full_scale() -> Self {
        Self {
            inner: netgen::Scenario::full_scale(),
        }
    }

    /// A reduced setup for quick runs.
    #[staticmethod]
    fn desk() -> Self {
        Self {
            inner: netgen::Scenario::desk(),
        }
    }

    #[getter]
    fn num_aps(&self) -> usize {
        self.inner.num_aps
    }
    #[setter]
    fn set_num_aps(&mut self, v: usize) {
        self.inner.num_aps = v;
    }
    #[getter]
    fn antennas_per_ap(&self) -> usize {
        self.inner.antennas_per_ap
    }
    #[setter]
    fn set_antennas_per_ap(&mut self, v: usize) {
        self.inner.antennas_per_ap = v;
    }
    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }
    #[setter]
    fn set_num_users(&mut self, v: usize) {
        self.inner.num_users = v;
    }
    #[getter]
    fn pilot_len(&self) -> usize {
        self.inner.pilot_len
    }
    #[setter]
    fn set_pilot_len(&mut self, v: usize) {
        self.inner.pilot_len = v;
    }
    #[getter]
    fn cluster_size(&self) -> usize {
        self.inner.cluster_size
    }
    #[setter]
    fn set_cluster_size(&mut self, v: usize) {
        self.inner.cluster_size = v;
    }
    #[getter]
    fn area_side_m(&self) -> f64 {
        self.inner.area_side
    }
    #[setter]
    fn set_area_side_m(&mut self, v: f64) {
        self.inner.area_side = v;
    }
    #[getter]
    fn csi_regime(&self) -> &'static str {
        self.inner.csi_regime.label()
    }
    #[setter]
    fn set_csi_regime(&mut self, v: &str) -> PyResult<()> {
        self.inner.csi_regime = parse_regime(v)?;
        Ok(())
    }

    /// Noise power in dBm.
    fn noise_power_dbm(&self) -> f64 {
        self.inner.noise_power_dbm()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    /// Full configuration as JSON, ready for `run_experiment`.
    #[pyo3(signature = (master_seed, num_drops, num_samples))]
    fn config_json(&self, master_seed: u64, num_drops: usize, num_samples: usize) -> String {
        netgen::ScenarioConfig {
            scenario: self.inner.clone(),
            master_seed,
            num_drops,
            num_samples,
        }
        .to_json_string()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "Scenario(L={}, N={}, K={}, tau={}, Q={}, regime={})",
            s.num_aps,
            s.antennas_per_ap,
            s.num_users,
            s.pilot_len,
            s.cluster_size,
            s.csi_regime.label()
        )
    }
}

/// One network drop: positions, large-scale gains, pilots and clusters.
#[pyclass(name = "Deployment")]
struct PyDeployment {
    inner: netgen::Deployment,
    scenario: netgen::Scenario,
    seed: u64,
    drop: u64,
}

#[pymethods]
impl PyDeployment {
    #[getter]
    fn ap_positions(&self) -> Vec<(f64, f64)> {
        self.inner.ap_positions.iter().map(|p| (p[0], p[1])).collect()
    }
    #[getter]
    fn user_positions(&self) -> Vec<(f64, f64)> {
        self.inner.user_positions.iter().map(|p| (p[0], p[1])).collect()
    }
    /// Noise-normalized gains, one row per AP.
    #[getter]
    fn gains(&self) -> Vec<Vec<f64>> {
        let g = &self.inner.gains;
        (0..g.nrows()).map(|l| g.row(l).iter().copied().collect()).collect()
    }
    #[getter]
    fn pilot_of(&self) -> Vec<usize> {
        self.inner.pilot_of.clone()
    }
    #[getter]
    fn clusters(&self) -> Vec<Vec<usize>> {
        self.inner.clusters.clone()
    }
    #[getter]
    fn cell_of(&self) -> Vec<usize> {
        self.inner.cell_of.clone()
    }

    /// Per-user rate estimates `(uatf, coherent, optimistic)` in bits per
    /// symbol under the fractional uplink power policy.
    #[pyo3(signature = (regime, samples, pi_samples=None))]
    fn rates(
        &self,
        py: Python<'_>,
        regime: &str,
        samples: usize,
        pi_samples: Option<usize>,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let regime = parse_regime(regime)?;
        py.detach(|| {
            let s = &self.scenario;
            let model = PilotNetwork::from_deployment(&self.inner, s)?;
            let clusters = self.inner.clusters_for(regime, s.cluster_size);
            let p = fractional_power(&self.inner.gains, &clusters, s.max_user_power(), Direction::Uplink)?;
            let team = TeamConfig::new(
                pi_samples.unwrap_or(samples),
                derive_key(self.seed, &[purpose::PI_ESTIMATE, self.drop]),
                s.num_aps,
            );
            let policy = Policy::prepare(regime, &model, &clusters, &p, &[], &team)?;
            let m = estimate_moments(&policy, &model, &EvalConfig::new(samples, self.seed, self.drop))?;
            Ok(m.report()
                .users
                .iter()
                .map(|u| (u.rate_uatf.value, u.rate_coh.value, u.rate_oer.value))
                .collect())
        })
        .map_err(to_py)
    }
}

/// Places APs and users for drop `drop` of the given seed.
#[pyfunction]
#[pyo3(signature = (scenario, seed, drop=0))]
fn place_network(scenario: &PyScenario, seed: u64, drop: u64) -> PyResult<PyDeployment> {
    let dep = netgen::place_network(&scenario.inner, &mut stream(seed, &[purpose::DEPLOYMENT, drop]))
        .map_err(to_py)?;
    Ok(PyDeployment {
        inner: dep,
        scenario: scenario.inner.clone(),
        seed,
        drop,
    })
}

/// Solves the uplink/downlink power pair that meets the SINR targets.
/// Returns `(p_ul, p_dl, spectral_radius)`.
#[pyfunction]
#[pyo3(name = "solve_power_pair")]
fn py_solve_power_pair(
    d: Vec<f64>,
    b: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    gamma: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let c = CouplingMatrices { d, b, sigma, gamma };
    c.validate().map_err(to_py)?;
    let pair = duality::solve_power_pair(&c).map_err(to_py)?;
    Ok((pair.p_ul, pair.p_dl, pair.spectral_radius))
}

/// Downlink SINRs for the given coupling and downlink powers.
#[pyfunction]
fn downlink_sinr(d: Vec<f64>, b: Vec<Vec<f64>>, sigma: Vec<f64>, p_dl: Vec<f64>) -> PyResult<Vec<f64>> {
    let gamma = vec![0.0; d.len()];
    let c = CouplingMatrices { d, b, sigma, gamma };
    c.validate().map_err(to_py)?;
    if p_dl.len() != c.num_users() {
        return Err(PyValueError::new_err("p_dl length differs from the number of users"));
    }
    Ok(c.downlink_sinr(&p_dl))
}

/// Runs an experiment from a JSON configuration and writes its CSV and
/// JSON outputs into `out_dir`. Returns the paths written.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, threads=1, diagnostics=false, power="fractional"))]
fn run_experiment(
    py: Python<'_>,
    config_json: &str,
    out_dir: PathBuf,
    threads: usize,
    diagnostics: bool,
    power: &str,
) -> PyResult<Vec<String>> {
    let config = netgen::ScenarioConfig::from_json_str(config_json).map_err(to_py)?;
    let power = parse_power(power)?;
    let mut spec = ExperimentSpec::new(config);
    spec.schemes = bench::default_schemes(&spec.config, power);
    spec.diagnostics = diagnostics;
    let files = py
        .detach(|| bench::run_experiment(&spec, &out_dir, threads))
        .map_err(to_py)?;
    let mut out = vec![files.rates, files.summary, files.cdf];
    out.extend(files.diagnostics);
    Ok(out.into_iter().map(|p| p.display().to_string()).collect())
}

/// Scheme names run by default for a configuration.
#[pyfunction]
fn default_schemes(config_json: &str) -> PyResult<Vec<String>> {
    let config = netgen::ScenarioConfig::from_json_str(config_json).map_err(to_py)?;
    Ok(bench::default_schemes(&config, PowerPolicy::Fractional)
        .into_iter()
        .map(|s: SchemeSpec| s.name)
        .collect())
}

#[pymodule]
fn cfmimo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyDeployment>()?;
    m.add_function(wrap_pyfunction!(place_network, m)?)?;
    m.add_function(wrap_pyfunction!(py_solve_power_pair, m)?)?;
    m.add_function(wrap_pyfunction!(downlink_sinr, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(default_schemes, m)?)?;
    Ok(())
}
