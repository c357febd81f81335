//! Test-only oracles. None of these go through the library's fitting or
//! likelihood code paths.
#![allow(dead_code)]

use mixtrack::cohort::{Cohort, Feature, FeatureSeries, Group, PatientRecord};
use mixtrack::model::ModelSpec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random cohort: `n_patients` patients with `lo..=hi` observations at
/// distinct random times in [0, 6].
pub fn random_cohort(seed: u64, n_patients: usize, lo: usize, hi: usize) -> Cohort {
    let mut r = rng(seed);
    let patients = (0..n_patients)
        .map(|i| {
            let n = r.random_range(lo..=hi);
            let mut times: Vec<f64> = Vec::new();
            while times.len() < n {
                let t = (r.random_range(0.0..6.0f64) * 100.0).round() / 100.0;
                if !times.contains(&t) {
                    times.push(t);
                }
            }
            let values: Vec<f64> = times
                .iter()
                .map(|t| 5.0 + 0.7 * t + r.random_range(-2.0..2.0))
                .collect();
            PatientRecord::new(format!("p{i:02}"), Group::Survived)
                .with_series(FeatureSeries::from_pairs(Feature::Volume, &times, &values).unwrap())
        })
        .collect();
    Cohort::new(patients, 6.0).unwrap()
}

/// Random symmetric PSD matrix, row-major.
pub fn random_psd(seed: u64, q: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(q, q, |_, _| r.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(q, q) * 0.05;
    m.transpose().iter().copied().collect()
}

/// Dense `(X, Z_blockdiag, y)` of the whole cohort built from design rows.
pub fn dense_design(cohort: &Cohort, feature: Feature, spec: &ModelSpec) -> (DMatrix<f64>, Vec<(usize, usize)>, DMatrix<f64>, DVector<f64>) {
    let mut rows_x = Vec::new();
    let mut rows_z = Vec::new();
    let mut ys = Vec::new();
    let mut spans = Vec::new();
    for p in cohort.patients() {
        if let Some(s) = p.series(feature) {
            let start = ys.len();
            for o in s.observations() {
                rows_x.push(spec.design_row(o.time));
                rows_z.push(spec.random_row(o.time));
                ys.push(o.value);
            }
            spans.push((start, ys.len()));
        }
    }
    let n = ys.len();
    let p = spec.n_fixed();
    let q = spec.n_random();
    let x = DMatrix::from_fn(n, p, |i, j| rows_x[i][j]);
    let z = DMatrix::from_fn(n, q, |i, j| rows_z[i][j]);
    (x, spans, z, DVector::from_vec(ys))
}

/// Full `N × N` marginal covariance, block-diagonal over patients.
pub fn dense_covariance(cohort: &Cohort, feature: Feature, spec: &ModelSpec, psi: &[f64], sigma2: f64) -> DMatrix<f64> {
    let (_, spans, z, y) = dense_design(cohort, feature, spec);
    let q = spec.n_random();
    let psi = DMatrix::from_row_slice(q, q, psi);
    let n = y.len();
    let mut v = DMatrix::identity(n, n) * sigma2;
    for (a, b) in spans {
        let zi = z.rows(a, b - a);
        let block = &zi * &psi * zi.transpose();
        let mut view = v.view_mut((a, a), (b - a, b - a));
        view += block;
    }
    v
}

/// Generic multivariate-normal log-density via LU.
pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let lu = cov.clone().lu();
    let det = lu.determinant();
    let r = y - mean;
    let sol = lu.solve(&r).unwrap();
    -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + r.dot(&sol))
}

pub fn dense_loglik(cohort: &Cohort, feature: Feature, spec: &ModelSpec, beta: &[f64], psi: &[f64], sigma2: f64) -> f64 {
    let (x, _, _, y) = dense_design(cohort, feature, spec);
    let v = dense_covariance(cohort, feature, spec, psi, sigma2);
    mvn_logpdf(&y, &(&x * DVector::from_column_slice(beta)), &v)
}

/// OLS through an explicit inverse of the Gram matrix.
pub fn normal_equations(cohort: &Cohort, feature: Feature, spec: &ModelSpec) -> Vec<f64> {
    let (x, _, _, y) = dense_design(cohort, feature, spec);
    let gram_inv = (x.transpose() * &x).try_inverse().unwrap();
    (gram_inv * x.transpose() * y).iter().copied().collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
