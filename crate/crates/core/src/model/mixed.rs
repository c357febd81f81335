//! Gaussian linear mixed model `yᵢ = Xᵢβ + Zᵢbᵢ + εᵢ`, `bᵢ ~ N(0, Ψ)`,
//! `εᵢ ~ N(0, σ²I)`, fitted by maximum likelihood with EM.
//!
//! The baseline iteration first maximizes the marginal likelihood over β
//! exactly (generalized least squares at the current variance components),
//! then runs one EM update of (Ψ, σ²) with β held fixed: Ψ becomes the
//! average posterior second moment of the random effects, σ² the expected
//! residual sum of squares over n. Both half-steps are non-decreasing in
//! the log-likelihood.
//!
//! Plain EM crawls sublinearly when an eigenvalue of Ψ heads to zero, so two
//! more candidates are scored every iteration: a parameter-expanded EM step
//! and an over-relaxed extrapolation of the best step so far. A candidate
//! replaces the baseline only if its log-likelihood is higher, so the
//! sequence stays monotone.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{blocks, Block};
use super::fixed::{dot, ols_blocks};
use super::linalg::{log_det, min_eigenvalue, project_psd, spd_cholesky};
use super::spec::ModelSpec;
use crate::cohort::{Cohort, Feature, FeatureSeries};
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

const MAX_OVERRELAXATION: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once `|ℓₖ₊₁ − ℓₖ| < rel_tol · |ℓₖ|`.
    pub rel_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
        }
    }
}

/// A fitted mixed model: the population curve `beta` plus one random
/// effect per training patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMixedModel {
    pub schema_version: u32,
    pub feature: Feature,
    pub spec: ModelSpec,
    pub beta: Vec<f64>,
    /// Standard errors of `beta` from the inverse GLS information.
    pub beta_se: Vec<f64>,
    /// Random-effects covariance, `q × q` row-major.
    pub psi: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first iteration and after each one.
    pub loglik_trace: Vec<f64>,
    pub n_patients: usize,
    pub n_obs: usize,
    /// Posterior mean random effect per training patient.
    pub blups: BTreeMap<String, Vec<f64>>,
}

impl FittedMixedModel {
    pub fn psi_matrix(&self) -> DMatrix<f64> {
        let q = self.spec.n_random();
        DMatrix::from_row_slice(q, q, &self.psi)
    }

    /// `xᵀβ + zᵀb`, with `b = 0` when absent.
    pub fn predict(&self, b: Option<&[f64]>, time: f64) -> f64 {
        let fixed = dot(&self.spec.design_row(time), &self.beta);
        match b {
            Some(b) => fixed + dot(&self.spec.random_row(time), b),
            None => fixed,
        }
    }

    /// Random effect for a patient given its observed history.
    pub fn blup(&self, history: &FeatureSeries) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let block = Block::from_series("history", history, &self.spec);
        let params = Params {
            beta: DVector::from_column_slice(&self.beta),
            psi: self.psi_matrix(),
            sigma2: self.sigma2,
        };
        let post = posterior(&block, &params)?;
        Ok(post.mean.iter().copied().collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: FittedMixedModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        self.spec.validate_mixed()?;
        let p = self.spec.n_fixed();
        let q = self.spec.n_random();
        if self.beta.len() != p || self.beta_se.len() != p {
            return Err(Error::Validation(format!("beta must have {p} entries")));
        }
        if self.psi.len() != q * q {
            return Err(Error::Validation(format!("psi must have {} entries", q * q)));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.beta) || !finite(&self.psi) {
            return Err(Error::Validation("non-finite coefficient".into()));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Validation(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        let psi = self.psi_matrix();
        if (&psi - psi.transpose()).abs().max() > 1e-12 * psi.abs().max().max(1.0) {
            return Err(Error::Validation("psi is not symmetric".into()));
        }
        if min_eigenvalue(&psi) < -1e-10 * psi.trace().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Validation("psi is not positive semidefinite".into()));
        }
        if let Some((id, _)) = self.blups.iter().find(|(_, b)| b.len() != q || !finite(b)) {
            return Err(Error::Validation(format!("blup for '{id}' must have {q} finite entries")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Params {
    beta: DVector<f64>,
    psi: DMatrix<f64>,
    sigma2: f64,
}

fn marginal_cov(block: &Block, psi: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let n = block.len();
    &block.z * psi * block.z.transpose() + DMatrix::identity(n, n) * sigma2
}

fn loglik_blocks(blocks: &[Block], p: &Params) -> Result<f64> {
    let mut ll = 0.0;
    for b in blocks {
        let chol = spd_cholesky(marginal_cov(b, &p.psi, p.sigma2))?;
        let r = &b.y - &b.x * &p.beta;
        let quad = r.dot(&chol.solve(&r));
        ll -= 0.5 * (b.len() as f64 * (2.0 * PI).ln() + log_det(&chol) + quad);
    }
    Ok(ll)
}

/// `(Σ XᵀV⁻¹X, Σ XᵀV⁻¹y)`
fn gls_system(blocks: &[Block], psi: &DMatrix<f64>, sigma2: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = blocks[0].x.ncols();
    let mut a = DMatrix::zeros(p, p);
    let mut c = DVector::zeros(p);
    for b in blocks {
        let chol = spd_cholesky(marginal_cov(b, psi, sigma2))?;
        let vinv_x = chol.solve(&b.x);
        a += b.x.transpose() * &vinv_x;
        c += vinv_x.transpose() * &b.y;
    }
    Ok((a, c))
}

fn gls_beta(blocks: &[Block], psi: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let (a, c) = gls_system(blocks, psi, sigma2)?;
    let chol = nalgebra::Cholesky::new(a)
        .ok_or_else(|| Error::RankDeficient("GLS information matrix is singular".into()))?;
    Ok(chol.solve(&c))
}

struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Posterior of `b` given the block: mean `ΨZᵀV⁻¹r`, covariance
/// `Ψ − ΨZᵀV⁻¹ZΨ`. Valid for singular Ψ.
fn posterior(block: &Block, p: &Params) -> Result<Posterior> {
    let chol = spd_cholesky(marginal_cov(block, &p.psi, p.sigma2))?;
    let r = &block.y - &block.x * &p.beta;
    let vinv_z = chol.solve(&block.z);
    let mean = &p.psi * (vinv_z.transpose() * &r);
    let cov = &p.psi - &p.psi * (block.z.transpose() * &vinv_z) * &p.psi;
    Ok(Posterior { mean, cov })
}

fn em_step(blocks: &[Block], p: &Params, sigma2_floor: f64) -> Result<Params> {
    let beta = gls_beta(blocks, &p.psi, p.sigma2)?;
    let cur = Params {
        beta,
        psi: p.psi.clone(),
        sigma2: p.sigma2,
    };
    let q = p.psi.nrows();
    let mut second_moment = DMatrix::zeros(q, q);
    let mut resid = 0.0;
    let mut n_obs = 0usize;
    for b in blocks {
        let post = posterior(b, &cur)?;
        second_moment += &post.mean * post.mean.transpose() + &post.cov;
        let e = &b.y - &b.x * &cur.beta - &b.z * &post.mean;
        resid += e.norm_squared() + (&b.z * &post.cov * b.z.transpose()).trace();
        n_obs += b.len();
    }
    Ok(Params {
        beta: cur.beta,
        psi: project_psd(&(second_moment / blocks.len() as f64)),
        sigma2: (resid / n_obs as f64).max(sigma2_floor),
    })
}

/// Parameter-expanded EM step: the random effects are rescaled by a
/// working matrix `α` fitted jointly with β by expected least squares,
/// then folded back into `Ψ = α Ψ* αᵀ`.
fn px_em_step(blocks: &[Block], p: &Params, sigma2_floor: f64) -> Result<Params> {
    let nf = p.beta.len();
    let q = p.psi.nrows();
    let dim = nf + q * q;
    let mut a = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    let mut second_moment = DMatrix::zeros(q, q);
    let mut posts = Vec::with_capacity(blocks.len());
    for b in blocks {
        let post = posterior(b, p)?;
        let m = &post.mean * post.mean.transpose() + &post.cov;
        let bt = post.mean.transpose();
        let xtz = b.x.transpose() * &b.z;
        let cross = bt.kronecker(&xtz);
        a.view_mut((0, 0), (nf, nf)).add_assign(&(b.x.transpose() * &b.x));
        a.view_mut((0, nf), (nf, q * q)).add_assign(&cross);
        a.view_mut((nf, 0), (q * q, nf)).add_assign(&cross.transpose());
        a.view_mut((nf, nf), (q * q, q * q)).add_assign(&m.kronecker(&(b.z.transpose() * &b.z)));
        c.rows_mut(0, nf).add_assign(&(b.x.transpose() * &b.y));
        c.rows_mut(nf, q * q).add_assign(&post.mean.kronecker(&(b.z.transpose() * &b.y)));
        second_moment += m;
        posts.push(post);
    }
    let eps = 1e-12 * a.diagonal().amax();
    let u = a
        .svd(true, true)
        .solve(&c, eps)
        .map_err(|e| Error::Numerical(format!("expanded normal equations: {e}")))?;
    let beta = u.rows(0, nf).into_owned();
    let alpha = DMatrix::from_column_slice(q, q, u.rows(nf, q * q).as_slice());
    let mut resid = 0.0;
    let mut n_obs = 0usize;
    for (b, post) in blocks.iter().zip(&posts) {
        let za = &b.z * &alpha;
        let e = &b.y - &b.x * &beta - &za * &post.mean;
        resid += e.norm_squared() + (&za * &post.cov * za.transpose()).trace();
        n_obs += b.len();
    }
    let psi_star = second_moment / blocks.len() as f64;
    Ok(Params {
        beta,
        psi: project_psd(&(&alpha * psi_star * alpha.transpose())),
        sigma2: (resid / n_obs as f64).max(sigma2_floor),
    })
}

fn extrapolate(from: &Params, to: &Params, eta: f64, sigma2_floor: f64) -> Params {
    Params {
        beta: &from.beta + (&to.beta - &from.beta) * eta,
        psi: project_psd(&(&from.psi + (&to.psi - &from.psi) * eta)),
        sigma2: (from.sigma2 + (to.sigma2 - from.sigma2) * eta).max(sigma2_floor),
    }
}

fn check_mixed_data(blocks: &[Block], feature: Feature) -> Result<()> {
    if blocks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "mixed fit needs >= 2 patients with '{feature}' observations, got {}",
            blocks.len()
        )));
    }
    if blocks.iter().all(|b| b.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "mixed fit needs a patient with >= 2 '{feature}' observations"
        )));
    }
    Ok(())
}

/// Maximum-likelihood fit of the mixed model by EM.
pub fn fit_mixed(
    cohort: &Cohort,
    feature: Feature,
    spec: &ModelSpec,
    opts: &EmOptions,
) -> Result<FittedMixedModel> {
    spec.validate_mixed()?;
    let blocks = blocks(cohort, feature, spec);
    check_mixed_data(&blocks, feature)?;
    let n_obs: usize = blocks.iter().map(Block::len).sum();

    let init = ols_blocks(&blocks)?;
    let p = spec.n_fixed();
    let q = spec.n_random();
    let mean_sq = blocks.iter().map(|b| b.y.norm_squared()).sum::<f64>() / n_obs as f64;
    let sigma2_floor = (1e-12 * mean_sq).max(1e-300);
    let sigma2_init = if n_obs > p {
        (init.rss / (n_obs - p) as f64).max(sigma2_floor)
    } else {
        sigma2_floor
    };

    let mut params = Params {
        beta: init.beta,
        psi: DMatrix::identity(q, q) * (0.1 * sigma2_init),
        sigma2: sigma2_init,
    };
    let mut ll = loglik_blocks(&blocks, &params)?;
    if !ll.is_finite() {
        return Err(Error::Divergence(format!("initial log-likelihood is {ll}")));
    }
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut eta = 2.0;

    while iterations < opts.max_iter {
        iterations += 1;
        let em = em_step(&blocks, &params, sigma2_floor)?;
        let ll_em = loglik_blocks(&blocks, &em)?;
        if !ll_em.is_finite() {
            return Err(Error::Divergence(format!(
                "log-likelihood became {ll_em} at iteration {iterations}"
            )));
        }
        let (mut next, mut ll_next) = (em, ll_em);

        if let Ok(px) = px_em_step(&blocks, &params, sigma2_floor) {
            if let Ok(ll_px) = loglik_blocks(&blocks, &px) {
                if ll_px.is_finite() && ll_px > ll_next {
                    (next, ll_next) = (px, ll_px);
                }
            }
        }

        let candidate = extrapolate(&params, &next, eta, sigma2_floor);
        match loglik_blocks(&blocks, &candidate) {
            Ok(ll_c) if ll_c.is_finite() && ll_c >= ll_next => {
                eta = (eta * 2.0).min(MAX_OVERRELAXATION);
                (next, ll_next) = (candidate, ll_c);
            }
            _ => eta = 2.0,
        }

        let change = (ll_next - ll).abs();
        params = next;
        ll = ll_next;
        trace.push(ll);
        if change < opts.rel_tol * ll.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let (info, _) = gls_system(&blocks, &params.psi, params.sigma2)?;
    let beta_cov = info
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("GLS information matrix is singular".into()))?;
    let beta_se = beta_cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();

    let mut blups = BTreeMap::new();
    for b in &blocks {
        let post = posterior(b, &params)?;
        blups.insert(b.id.clone(), post.mean.iter().copied().collect());
    }

    Ok(FittedMixedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        feature,
        spec: spec.clone(),
        beta: params.beta.iter().copied().collect(),
        beta_se,
        psi: params.psi.transpose().iter().copied().collect(),
        sigma2: params.sigma2,
        loglik: ll,
        iterations,
        converged,
        loglik_trace: trace,
        n_patients: blocks.len(),
        n_obs,
        blups,
    })
}

fn params_from_slices(beta: &[f64], psi: &[f64], sigma2: f64, spec: &ModelSpec) -> Result<Params> {
    let p = spec.n_fixed();
    let q = spec.n_random();
    if beta.len() != p || psi.len() != q * q {
        return Err(Error::Validation(format!(
            "expected {p} beta and {} psi entries, got {} and {}",
            q * q,
            beta.len(),
            psi.len()
        )));
    }
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(Error::Validation(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(Params {
        beta: DVector::from_column_slice(beta),
        psi: DMatrix::from_row_slice(q, q, psi),
        sigma2,
    })
}

/// Marginal log-likelihood
/// `−½ Σᵢ [nᵢ log 2π + log|Vᵢ| + rᵢᵀVᵢ⁻¹rᵢ]` with `Vᵢ = ZᵢΨZᵢᵀ + σ²I`.
/// `psi` is row-major.
pub fn loglik(
    beta: &[f64],
    psi: &[f64],
    sigma2: f64,
    cohort: &Cohort,
    feature: Feature,
    spec: &ModelSpec,
) -> Result<f64> {
    spec.validate()?;
    let params = params_from_slices(beta, psi, sigma2, spec)?;
    loglik_blocks(&blocks(cohort, feature, spec), &params)
}

/// Score of the log-likelihood in β: `Σ XᵢᵀVᵢ⁻¹rᵢ`.
pub fn beta_score(
    beta: &[f64],
    psi: &[f64],
    sigma2: f64,
    cohort: &Cohort,
    feature: Feature,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let params = params_from_slices(beta, psi, sigma2, spec)?;
    let mut score = DVector::zeros(spec.n_fixed());
    for b in blocks(cohort, feature, spec) {
        let chol = spd_cholesky(marginal_cov(&b, &params.psi, params.sigma2))?;
        let r = &b.y - &b.x * &params.beta;
        score += b.x.transpose() * chol.solve(&r);
    }
    Ok(score.iter().copied().collect())
}

/// Free-function form of [`FittedMixedModel::blup`].
pub fn blup(model: &FittedMixedModel, history: &FeatureSeries) -> Result<Vec<f64>> {
    model.blup(history)
}
