use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{blocks, stack, Block};
use super::spec::ModelSpec;
use crate::cohort::{Cohort, Feature};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Pooled least-squares regression of one feature on the time basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFixedModel {
    pub feature: Feature,
    pub spec: ModelSpec,
    pub beta: Vec<f64>,
    /// `RSS / (n − p)`; zero when `n = p`.
    pub noise_variance: f64,
    pub n_obs: usize,
}

impl FittedFixedModel {
    /// `xᵀβ` at `time` weeks.
    pub fn predict(&self, time: f64) -> f64 {
        dot(&self.spec.design_row(time), &self.beta)
    }
}

pub(crate) struct Ols {
    pub beta: DVector<f64>,
    pub rss: f64,
    pub n: usize,
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {p} coefficients"
        )));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient(format!(
            "design singular values span [{smin:e}, {smax:e}]"
        )));
    }
    let beta = svd
        .solve(y, 0.0)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
    let rss = (y - x * &beta).norm_squared();
    Ok(Ols { beta, rss, n })
}

pub(crate) fn ols_blocks(blocks: &[Block]) -> Result<Ols> {
    let (x, y) = stack(blocks);
    ols(&x, &y)
}

/// Ordinary least squares over all observations of `feature`, pooled
/// across patients.
pub fn fit_fixed(cohort: &Cohort, feature: Feature, spec: &ModelSpec) -> Result<FittedFixedModel> {
    spec.validate()?;
    let blocks = blocks(cohort, feature, spec);
    let n: usize = blocks.iter().map(Block::len).sum();
    let p = spec.n_fixed();
    if n < p {
        return Err(Error::InsufficientData(format!(
            "{n} '{feature}' observations for {p} coefficients"
        )));
    }
    let fit = ols_blocks(&blocks)?;
    let noise_variance = if n > p { fit.rss / (n - p) as f64 } else { 0.0 };
    Ok(FittedFixedModel {
        feature,
        spec: spec.clone(),
        beta: fit.beta.iter().copied().collect(),
        noise_variance,
        n_obs: fit.n,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
