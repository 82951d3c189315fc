//! MSE-optimal beamformers under the supported CSI sharing patterns.
//!
//! All constructors take noise-normalized powers `p` and nonnegative
//! per-AP multipliers `lambda` (zero for the sum-power problems).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{c, checked_solve, hpd_solve, CMat, CVec, C64};
use crate::model::{ApSample, CsiModel, Realization};
use crate::netgen::CsiRegime;
use crate::rng::{purpose, stream};
use crate::stats::{effective_batches, batch_of, require_samples, BatchAccumulator, DEFAULT_BATCHES};

/// Per-user beamformers stored only on the serving APs.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub num_aps: usize,
    pub antennas: usize,
    /// For each user, `(ap, v_lk)` sorted by AP.
    pub blocks: Vec<Vec<(usize, CVec)>>,
}

impl BeamformerSet {
    pub fn zeros(num_aps: usize, antennas: usize, clusters: &[Vec<usize>]) -> Self {
        Self {
            num_aps,
            antennas,
            blocks: clusters
                .iter()
                .map(|cl| cl.iter().map(|&l| (l, CVec::zeros(antennas))).collect())
                .collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize, l: usize) -> Option<&CVec> {
        self.blocks[k].iter().find(|(ap, _)| *ap == l).map(|(_, v)| v)
    }

    /// Stacked `N L` vector with zeros outside the cluster.
    pub fn dense(&self, k: usize) -> CVec {
        let n = self.antennas;
        let mut v = CVec::zeros(n * self.num_aps);
        for (l, b) in &self.blocks[k] {
            v.rows_mut(l * n, n).copy_from(b);
        }
        v
    }

    /// `sum_l (1 + lambda_l) |v_lk|^2`.
    pub fn weighted_power(&self, k: usize, lambda: &[f64]) -> f64 {
        self.blocks[k]
            .iter()
            .map(|(l, v)| (1.0 + lambda.get(*l).copied().unwrap_or(0.0)) * v.norm_squared())
            .sum()
    }

    /// `h_j^H v_k` summed over the cluster of user `k`.
    pub fn inner(&self, r: &Realization, j: usize, k: usize) -> C64 {
        self.blocks[k]
            .iter()
            .map(|(l, v)| r.aps[*l].h.column(j).dotc(v))
            .sum()
    }

    /// `H^H v_k` for all users at once.
    pub fn gains(&self, r: &Realization, k: usize, estimates: bool) -> CVec {
        let num_users = r.aps.first().map_or(0, |a| a.h.ncols());
        let mut g = CVec::zeros(num_users);
        for (l, v) in &self.blocks[k] {
            let m = if estimates { &r.aps[*l].hhat } else { &r.aps[*l].h };
            g += m.ad_mul(v);
        }
        g
    }

    /// True when every block is finite and only cluster blocks are stored.
    pub fn respects_clusters(&self, clusters: &[Vec<usize>]) -> bool {
        self.blocks.iter().zip(clusters).all(|(b, cl)| {
            b.len() == cl.len()
                && b.iter().zip(cl).all(|((l, v), m)| {
                    l == m && v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
                })
        })
    }
}

fn sqrt_powers(p: &[f64]) -> Vec<f64> {
    p.iter().map(|x| x.max(0.0).sqrt()).collect()
}

/// `Hhat P^{1/2}`.
pub fn scale_columns(hhat: &CMat, sqrt_p: &[f64]) -> CMat {
    let mut out = hhat.clone();
    for (k, s) in sqrt_p.iter().enumerate() {
        out.column_mut(k).scale_mut(*s);
    }
    out
}

/// `V_l = (Hhat P Hhat^H + Psi + (1 + lambda) I)^{-1} Hhat P^{1/2}`.
pub fn local_mmse_stage(hhat: &CMat, psi: &CMat, p: &[f64], lambda: f64) -> Result<CMat> {
    if hhat.ncols() != p.len() || psi.nrows() != hhat.nrows() {
        return Err(Error::Dimension("local stage inputs disagree".into()));
    }
    let hp = scale_columns(hhat, &sqrt_powers(p));
    local_stage_scaled(&hp, psi, lambda)
}

fn local_stage_scaled(hp: &CMat, psi: &CMat, lambda: f64) -> Result<CMat> {
    let n = hp.nrows();
    let mut a = hp * hp.adjoint() + psi;
    for i in 0..n {
        a[(i, i)] += 1.0 + lambda;
    }
    hpd_solve(&a, hp)
}

/// Centralized MMSE beamformers of `users`, all sharing `cluster`.
/// Returns one stacked `|cluster| N` vector per user.
pub fn centralized_mmse(
    aps: &[ApSample],
    psi: &[CMat],
    p: &[f64],
    lambda: &[f64],
    cluster: &[usize],
    users: &[usize],
) -> Result<Vec<CVec>> {
    let sp = sqrt_powers(p);
    let hp: Vec<CMat> = cluster.iter().map(|&l| scale_columns(&aps[l].hhat, &sp)).collect();
    centralized_from_scaled(&hp, &|a, b| &hp[a] * hp[b].adjoint(), psi, lambda, cluster, users)
}

fn centralized_from_scaled(
    hp: &[CMat],
    gram: &dyn Fn(usize, usize) -> CMat,
    psi: &[CMat],
    lambda: &[f64],
    cluster: &[usize],
    users: &[usize],
) -> Result<Vec<CVec>> {
    let n = hp.first().map_or(0, |m| m.nrows());
    let m = cluster.len() * n;
    let mut a = CMat::zeros(m, m);
    for (bi, &li) in cluster.iter().enumerate() {
        for (bj, &_lj) in cluster.iter().enumerate() {
            let blk = gram(bi, bj);
            a.view_mut((bi * n, bj * n), (n, n)).copy_from(&blk);
        }
        let mut d = a.view_mut((bi * n, bi * n), (n, n));
        d += &psi[li];
        for i in 0..n {
            d[(i, i)] += 1.0 + lambda.get(li).copied().unwrap_or(0.0);
        }
    }
    let num_users = hp.first().map_or(0, |h| h.ncols());
    let mut rhs = CMat::zeros(m, users.len());
    for (col, &k) in users.iter().enumerate() {
        if k >= num_users {
            return Err(Error::Dimension(format!("user {k} out of range")));
        }
        for (bi, h) in hp.iter().enumerate() {
            rhs.view_mut((bi * n, col), (n, 1)).copy_from(&h.column(k));
        }
    }
    let x = hpd_solve(&a, &rhs)?;
    Ok((0..users.len()).map(|c| x.column(c).into_owned()).collect())
}

/// Estimates of `Pi_l = E[P^{1/2} Hhat_l^H V_l]`.
#[derive(Debug, Clone)]
pub struct PiMatrices {
    pub pi: Vec<CMat>,
    /// Entrywise standard errors (modulus of the complex error).
    pub std_err: Vec<DMatrix<f64>>,
    pub samples: usize,
    /// Extreme eigenvalues of the Hermitian part, with jackknife errors.
    pub eig_min: Vec<(f64, f64)>,
    pub eig_max: Vec<(f64, f64)>,
}

impl PiMatrices {
    /// Exact matrices without sampling error.
    pub fn exact(pi: Vec<CMat>) -> Self {
        let k = pi.first().map_or(0, |m| m.nrows());
        let ev: Vec<Vec<f64>> = pi.iter().map(crate::linalg::hermitian_eigenvalues).collect();
        Self {
            std_err: vec![DMatrix::zeros(k, k); pi.len()],
            eig_min: ev.iter().map(|e| (e.first().copied().unwrap_or(0.0), 0.0)).collect(),
            eig_max: ev.iter().map(|e| (e.last().copied().unwrap_or(0.0), 0.0)).collect(),
            pi,
            samples: 0,
        }
    }

    pub fn max_std_err(&self, l: usize) -> f64 {
        self.std_err[l].iter().copied().fold(0.0, f64::max)
    }
}

fn pi_sample(ap: &ApSample, psi: &CMat, sp: &[f64], lambda: f64) -> Result<CMat> {
    let hp = scale_columns(&ap.hhat, sp);
    let v = local_stage_scaled(&hp, psi, lambda)?;
    Ok(hp.ad_mul(&v))
}

fn extreme_eigs(values: &[f64], k: usize) -> Vec<f64> {
    let m = CMat::from_fn(k, k, |i, j| {
        let idx = 2 * (i + j * k);
        c(values[idx], values[idx + 1])
    });
    let ev = crate::linalg::hermitian_eigenvalues(&m);
    vec![ev[0], ev[k - 1]]
}

/// Monte Carlo estimate of every `Pi_l` from fresh draws of each AP.
pub fn compute_pi(
    model: &dyn CsiModel,
    p: &[f64],
    lambda: &[f64],
    samples: usize,
    seed: u64,
) -> Result<PiMatrices> {
    require_samples(samples, 2, "statistical stage")?;
    let k = model.num_users();
    let sp = sqrt_powers(p);
    let batches = effective_batches(samples, DEFAULT_BATCHES);
    let per_ap: Vec<Result<(CMat, DMatrix<f64>, (f64, f64), (f64, f64))>> = (0..model.num_aps())
        .into_par_iter()
        .map(|l| {
            let psi = model.psi(l, p);
            let lam = lambda.get(l).copied().unwrap_or(0.0);
            let mut acc = BatchAccumulator::new(2 * k * k, batches);
            let mut buf = vec![0.0; 2 * k * k];
            for s in 0..samples {
                let ap = model.draw_ap(l, &mut stream(seed, &[purpose::PI_ESTIMATE, s as u64, l as u64]));
                let m = pi_sample(&ap, &psi, &sp, lam)?;
                for (i, z) in m.iter().enumerate() {
                    buf[2 * i] = z.re;
                    buf[2 * i + 1] = z.im;
                }
                acc.add(batch_of(s, samples, batches), &buf);
            }
            let mean = acc.mean();
            let se = acc.std_err();
            let pi = CMat::from_fn(k, k, |i, j| {
                let idx = 2 * (i + j * k);
                c(mean[idx], mean[idx + 1])
            });
            let se = DMatrix::from_fn(k, k, |i, j| {
                let idx = 2 * (i + j * k);
                se[idx].hypot(se[idx + 1])
            });
            let (eig, eig_se) = acc.jackknife_vec(|m| extreme_eigs(m, k));
            Ok((pi, se, (eig[0], eig_se[0]), (eig[1], eig_se[1])))
        })
        .collect();
    let mut out = PiMatrices {
        pi: Vec::new(),
        std_err: Vec::new(),
        samples,
        eig_min: Vec::new(),
        eig_max: Vec::new(),
    };
    for r in per_ap {
        let (pi, se, lo, hi) = r?;
        out.pi.push(pi);
        out.std_err.push(se);
        out.eig_min.push(lo);
        out.eig_max.push(hi);
    }
    Ok(out)
}

/// Solves `c_l + sum_{j in cluster, j != l} Pi_j c_j = e_k` for `l` in the
/// cluster. Returns the coefficients in cluster order and the reciprocal
/// condition number of the block system.
pub fn team_statistical_stage(pi: &[CMat], k: usize, cluster: &[usize]) -> Result<(Vec<CVec>, f64)> {
    let num_users = pi.first().map_or(0, |m| m.nrows());
    let m = cluster.len();
    if m == 1 {
        let mut e = CVec::zeros(num_users);
        e[k] = c(1.0, 0.0);
        return Ok((vec![e], 1.0));
    }
    let dim = m * num_users;
    let mut a = CMat::identity(dim, dim);
    for bi in 0..m {
        for (bj, &lj) in cluster.iter().enumerate() {
            if bi != bj {
                a.view_mut((bi * num_users, bj * num_users), (num_users, num_users))
                    .copy_from(&pi[lj]);
            }
        }
    }
    let mut rhs = CVec::zeros(dim);
    for bi in 0..m {
        rhs[bi * num_users + k] = c(1.0, 0.0);
    }
    let (x, rc) = checked_solve(&a, &rhs, &format!("statistical stage of user {k}"))?;
    Ok((
        (0..m).map(|bi| x.rows(bi * num_users, num_users).into_owned()).collect(),
        rc,
    ))
}

/// `v_lk = V_l c_lk`, masked by the clusters.
pub fn assemble_local_tmmse(
    stages: &[Option<CMat>],
    coeffs: &[Vec<CVec>],
    clusters: &[Vec<usize>],
    antennas: usize,
) -> BeamformerSet {
    BeamformerSet {
        num_aps: stages.len(),
        antennas,
        blocks: clusters
            .iter()
            .zip(coeffs)
            .map(|(cl, ck)| {
                cl.iter()
                    .zip(ck)
                    .map(|(&l, c)| {
                        let v = stages[l].as_ref().map_or_else(|| CVec::zeros(antennas), |s| s * c);
                        (l, v)
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Settings for the statistical stage of team and mixed policies.
#[derive(Debug, Clone)]
pub struct TeamConfig {
    pub pi_samples: usize,
    pub seed: u64,
    /// APs whose decorrelated pilots form the common information of the
    /// mixed regime.
    pub shared: Vec<bool>,
}

impl TeamConfig {
    pub fn new(pi_samples: usize, seed: u64, num_aps: usize) -> Self {
        Self {
            pi_samples,
            seed,
            shared: default_shared(num_aps),
        }
    }
}

/// First half of the APs, rounded up.
pub fn default_shared(num_aps: usize) -> Vec<bool> {
    (0..num_aps).map(|l| l < num_aps.div_ceil(2)).collect()
}

#[derive(Debug, Clone)]
enum Team {
    None,
    Local { coeffs: Vec<Vec<CVec>>, min_rcond: f64 },
    Mixed { shared: Vec<bool> },
}

/// A beamforming rule with its statistical stage already solved, ready to
/// be applied to realizations.
#[derive(Debug, Clone)]
pub struct Policy {
    pub regime: CsiRegime,
    pub clusters: Vec<Vec<usize>>,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    psi: Vec<CMat>,
    pi: Option<PiMatrices>,
    team: Team,
    antennas: usize,
}

impl Policy {
    pub fn prepare(
        regime: CsiRegime,
        model: &dyn CsiModel,
        clusters: &[Vec<usize>],
        p: &[f64],
        lambda: &[f64],
        team: &TeamConfig,
    ) -> Result<Self> {
        let l = model.num_aps();
        if p.len() != model.num_users() || clusters.len() != model.num_users() {
            return Err(Error::Dimension("powers/clusters do not match the user count".into()));
        }
        if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain("powers must be finite and nonnegative".into()));
        }
        let lambda = if lambda.is_empty() { vec![0.0; l] } else { lambda.to_vec() };
        if lambda.len() != l || lambda.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Domain("multipliers must be nonnegative, one per AP".into()));
        }
        if regime == CsiRegime::MultiCell && clusters.iter().any(|c| c.len() != 1) {
            return Err(Error::Domain("multi-cell beamforming needs one serving AP per user".into()));
        }
        let psi: Vec<CMat> = (0..l).map(|ap| model.psi(ap, p)).collect();
        let mut policy = Self {
            regime,
            clusters: clusters.to_vec(),
            p: p.to_vec(),
            lambda,
            psi,
            pi: None,
            team: Team::None,
            antennas: model.antennas(),
        };
        match regime {
            CsiRegime::MultiCell | CsiRegime::CellFreeCentralized => {}
            CsiRegime::CellFreeLocal => {
                let pi = compute_pi(model, p, &policy.lambda, team.pi_samples, team.seed)?;
                let mut coeffs = Vec::with_capacity(clusters.len());
                let mut min_rcond = f64::INFINITY;
                for (k, cl) in clusters.iter().enumerate() {
                    let (ck, rc) = team_statistical_stage(&pi.pi, k, cl)?;
                    min_rcond = min_rcond.min(rc);
                    coeffs.push(ck);
                }
                policy.pi = Some(pi);
                policy.team = Team::Local { coeffs, min_rcond };
            }
            CsiRegime::CellFreeMixed => {
                if team.shared.len() != l {
                    return Err(Error::Dimension("shared AP mask has the wrong length".into()));
                }
                let pi = compute_pi(model, p, &policy.lambda, team.pi_samples, team.seed)?;
                policy.pi = Some(pi);
                policy.team = Team::Mixed {
                    shared: team.shared.clone(),
                };
            }
        }
        Ok(policy)
    }

    pub fn pi(&self) -> Option<&PiMatrices> {
        self.pi.as_ref()
    }

    /// Smallest reciprocal condition number over the team systems.
    pub fn min_rcond(&self) -> Option<f64> {
        match &self.team {
            Team::Local { min_rcond, .. } => Some(*min_rcond),
            _ => None,
        }
    }

    /// Team coefficients `c_lk` in cluster order (local regime only).
    pub fn coefficients(&self, k: usize) -> Option<&[CVec]> {
        match &self.team {
            Team::Local { coeffs, .. } => Some(&coeffs[k]),
            _ => None,
        }
    }

    pub fn psi(&self, l: usize) -> &CMat {
        &self.psi[l]
    }

    pub fn with_coefficients(&self, coeffs: Vec<Vec<CVec>>) -> Result<Self> {
        if self.regime != CsiRegime::CellFreeLocal {
            return Err(Error::Domain("coefficients only apply to the local regime".into()));
        }
        let mut out = self.clone();
        out.team = Team::Local {
            coeffs,
            min_rcond: self.min_rcond().unwrap_or(1.0),
        };
        Ok(out)
    }

    fn local_stages(&self, r: &Realization) -> Result<Vec<Option<CMat>>> {
        let mut used = vec![false; r.num_aps()];
        for cl in &self.clusters {
            for &l in cl {
                used[l] = true;
            }
        }
        let sp = sqrt_powers(&self.p);
        (0..r.num_aps())
            .map(|l| {
                if used[l] {
                    let hp = scale_columns(&r.aps[l].hhat, &sp);
                    local_stage_scaled(&hp, &self.psi[l], self.lambda[l]).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    pub fn beamformers(&self, r: &Realization) -> Result<BeamformerSet> {
        match &self.team {
            Team::None if self.regime == CsiRegime::MultiCell => {
                let stages = self.local_stages(r)?;
                Ok(BeamformerSet {
                    num_aps: r.num_aps(),
                    antennas: self.antennas,
                    blocks: self
                        .clusters
                        .iter()
                        .enumerate()
                        .map(|(k, cl)| {
                            let l = cl[0];
                            (l, stages[l].as_ref().unwrap().column(k).into_owned())
                        })
                        .map(|b| vec![b])
                        .collect(),
                })
            }
            Team::None => self.centralized(r),
            Team::Local { coeffs, .. } => {
                let stages = self.local_stages(r)?;
                Ok(assemble_local_tmmse(&stages, coeffs, &self.clusters, self.antennas))
            }
            Team::Mixed { shared } => self.mixed(r, shared),
        }
    }

    fn centralized(&self, r: &Realization) -> Result<BeamformerSet> {
        let sp = sqrt_powers(&self.p);
        let hp: Vec<CMat> = r.aps.iter().map(|a| scale_columns(&a.hhat, &sp)).collect();
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for (k, cl) in self.clusters.iter().enumerate() {
            match groups.iter_mut().find(|(c, _)| c == cl) {
                Some((_, users)) => users.push(k),
                None => groups.push((cl.clone(), vec![k])),
            }
        }
        let l = r.num_aps();
        let mut cache: Vec<Option<CMat>> = vec![None; l * l];
        let mut blocks: Vec<Vec<(usize, CVec)>> = vec![Vec::new(); self.clusters.len()];
        let n = self.antennas;
        for (cl, users) in &groups {
            for &a in cl {
                for &b in cl {
                    if cache[a * l + b].is_none() {
                        let g = &hp[a] * hp[b].adjoint();
                        if a != b {
                            cache[b * l + a] = Some(g.adjoint());
                        }
                        cache[a * l + b] = Some(g);
                    }
                }
            }
            let local_hp: Vec<CMat> = cl.iter().map(|&a| hp[a].clone()).collect();
            let gram = |i: usize, j: usize| cache[cl[i] * l + cl[j]].clone().unwrap();
            let vs = centralized_from_scaled(&local_hp, &gram, &self.psi, &self.lambda, cl, users)?;
            for (&k, v) in users.iter().zip(vs) {
                blocks[k] = cl
                    .iter()
                    .enumerate()
                    .map(|(bi, &ap)| (ap, v.rows(bi * n, n).into_owned()))
                    .collect();
            }
        }
        Ok(BeamformerSet {
            num_aps: l,
            antennas: n,
            blocks,
        })
    }

    fn mixed(&self, r: &Realization, shared: &[bool]) -> Result<BeamformerSet> {
        let stages = self.local_stages(r)?;
        let pi = self.pi.as_ref().expect("mixed policy carries statistics");
        let sp = sqrt_powers(&self.p);
        let cond: Vec<CMat> = (0..r.num_aps())
            .map(|l| match (&stages[l], shared[l]) {
                (Some(v), true) => scale_columns(&r.aps[l].hhat, &sp).ad_mul(v),
                _ => pi.pi[l].clone(),
            })
            .collect();
        let mut coeffs = Vec::with_capacity(self.clusters.len());
        for (k, cl) in self.clusters.iter().enumerate() {
            coeffs.push(team_statistical_stage(&cond, k, cl)?.0);
        }
        Ok(assemble_local_tmmse(&stages, &coeffs, &self.clusters, self.antennas))
    }
}

/// A beamformer whose block at AP `l` depends only on that AP's data.
pub trait LocalRule: Sync {
    fn local_block(&self, l: usize, k: usize, ap: &ApSample) -> Result<CVec>;
}

impl LocalRule for Policy {
    fn local_block(&self, l: usize, k: usize, ap: &ApSample) -> Result<CVec> {
        let pos = match self.clusters[k].iter().position(|&m| m == l) {
            Some(i) => i,
            None => return Ok(CVec::zeros(self.antennas)),
        };
        let v = local_mmse_stage(&ap.hhat, &self.psi[l], &self.p, self.lambda[l])?;
        match (&self.team, self.regime) {
            (Team::Local { coeffs, .. }, _) => Ok(v * &coeffs[k][pos]),
            (Team::None, CsiRegime::MultiCell) => Ok(v.column(k).into_owned()),
            _ => Err(Error::Domain(format!(
                "{} beamformers are not local rules",
                self.regime.label()
            ))),
        }
    }
}

/// Adds a constant offset to one block of another rule.
pub struct Perturbed<'a, R: LocalRule> {
    pub base: &'a R,
    pub ap: usize,
    pub user: usize,
    pub offset: CVec,
}

impl<R: LocalRule> LocalRule for Perturbed<'_, R> {
    fn local_block(&self, l: usize, k: usize, ap: &ApSample) -> Result<CVec> {
        let v = self.base.local_block(l, k, ap)?;
        Ok(if l == self.ap && k == self.user {
            v + &self.offset
        } else {
            v
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub ap: usize,
    /// Clamped at zero.
    pub value: f64,
    /// Unbiased estimate, may be slightly negative.
    pub raw: f64,
    pub std_err: f64,
}

/// Nested Monte Carlo check of the team optimality conditions of user `k`
/// for a local rule: for each serving AP `l`, estimates
/// `E|v_lk - V_l (e_k - sum_{j != l} P^{1/2} E[Hhat_j^H v_jk | S_l])|^2`.
#[allow(clippy::too_many_arguments)]
pub fn tmmse_residual(
    rule: &dyn LocalRule,
    k: usize,
    cluster: &[usize],
    model: &dyn CsiModel,
    p: &[f64],
    lambda: &[f64],
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<Vec<Residual>> {
    require_samples(outer, 2, "residual outer loop")?;
    require_samples(inner, 1, "residual inner loop")?;
    let num_users = model.num_users();
    let sp = sqrt_powers(p);
    let batches = effective_batches(outer, DEFAULT_BATCHES);
    let mut out = Vec::with_capacity(cluster.len());
    for &l in cluster {
        let psi = model.psi(l, p);
        let lam = lambda.get(l).copied().unwrap_or(0.0);
        let mut acc = BatchAccumulator::new(1, batches);
        for s in 0..outer {
            let ap = model.draw_ap(l, &mut stream(seed, &[purpose::RESIDUAL, l as u64, s as u64]));
            let v = rule.local_block(l, k, &ap)?;
            let stage = local_mmse_stage(&ap.hhat, &psi, p, lam)?;
            let mut r = [CVec::zeros(0), CVec::zeros(0)];
            for (rep, slot) in r.iter_mut().enumerate() {
                let mut m = CVec::zeros(num_users);
                for &j in cluster.iter().filter(|&&j| j != l) {
                    for t in 0..inner {
                        let key = [purpose::NESTED, l as u64, s as u64, rep as u64, t as u64, j as u64];
                        let apj = model.draw_ap(j, &mut stream(seed, &key));
                        let vj = rule.local_block(j, k, &apj)?;
                        m += scale_columns(&apj.hhat, &sp).ad_mul(&vj);
                    }
                }
                m /= c(inner as f64, 0.0);
                let mut target = -m;
                target[k] += c(1.0, 0.0);
                *slot = &v - &stage * target;
            }
            acc.add(batch_of(s, outer, batches), &[r[0].dotc(&r[1]).re]);
        }
        let raw = acc.mean()[0];
        out.push(Residual {
            ap: l,
            value: raw.max(0.0),
            raw,
            std_err: acc.std_err()[0],
        });
    }
    Ok(out)
}
