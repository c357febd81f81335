//! Leave-one-out cross-validation of the predictors, and side-by-side
//! comparison of the resulting reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Feature, Group};
use crate::error::{Error, Result};
use crate::model::{EmOptions, ModelSpec};
use crate::predictor::{train, PredictionMode, PredictionRequest, PredictorKind, TrainedPredictor};

/// A patient needs this many observations to be held out.
pub const MIN_ELIGIBLE_OBS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CvOptions {
    pub mode: PredictionMode,
    /// History length override; by default all observations but the last
    /// form the history and the last one is the target.
    pub history_len: Option<usize>,
    pub em: EmOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub time: f64,
    pub actual: f64,
    pub predicted: f64,
    /// `predicted − actual`
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub patient_id: String,
    pub kind: PredictorKind,
    pub history_len: usize,
    pub residuals: Vec<Residual>,
    /// Set when training or forecasting failed; such folds carry no
    /// residuals and are excluded from the aggregates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// One held-out patient, evaluated under every requested kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub patient_id: String,
    pub results: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindAggregate {
    pub kind: PredictorKind,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub mean_signed_error: Option<f64>,
    pub n_residuals: usize,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema_version: u32,
    pub feature: Feature,
    pub group: Group,
    pub spec: ModelSpec,
    pub mode: PredictionMode,
    pub history_len: Option<usize>,
    pub kinds: Vec<PredictorKind>,
    pub folds: Vec<Fold>,
    pub aggregates: Vec<KindAggregate>,
}

impl CvReport {
    pub fn aggregate(&self, kind: PredictorKind) -> Option<&KindAggregate> {
        self.aggregates.iter().find(|a| a.kind == kind)
    }

    pub fn rmse(&self, kind: PredictorKind) -> Option<f64> {
        self.aggregate(kind).and_then(|a| a.rmse)
    }

    pub fn results(&self, kind: PredictorKind) -> impl Iterator<Item = &FoldResult> {
        self.folds
            .iter()
            .flat_map(|f| f.results.iter())
            .filter(move |r| r.kind == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Flat `patient_id,kind,time,actual,predicted,error` table.
    pub fn residuals_csv(&self) -> String {
        let mut out = String::from("patient_id,kind,time,actual,predicted,error\n");
        for fold in &self.folds {
            for r in &fold.results {
                for e in &r.residuals {
                    writeln!(
                        out,
                        "{},{},{:?},{:?},{:?},{:?}",
                        fold.patient_id, r.kind, e.time, e.actual, e.predicted, e.error
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// Per-kind histogram of forecast errors over a shared range, as
    /// `kind,bin_lower,bin_upper,count` rows.
    pub fn residual_histogram_csv(&self, bins: usize) -> String {
        let bins = bins.max(1);
        let errors = |k: PredictorKind| -> Vec<f64> {
            self.results(k)
                .flat_map(|r| r.residuals.iter().map(|e| e.error))
                .collect()
        };
        let all: Vec<f64> = self.kinds.iter().flat_map(|&k| errors(k)).collect();
        let mut out = String::from("kind,bin_lower,bin_upper,count\n");
        if all.is_empty() {
            return out;
        }
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        for &kind in &self.kinds {
            let mut counts = vec![0usize; bins];
            for e in errors(kind) {
                let b = (((e - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let lower = lo + width * b as f64;
                writeln!(out, "{kind},{lower:?},{:?},{c}", lower + width).unwrap();
            }
        }
        out
    }
}

fn aggregate(kind: PredictorKind, folds: &[Fold]) -> KindAggregate {
    let results: Vec<&FoldResult> = folds
        .iter()
        .flat_map(|f| f.results.iter())
        .filter(|r| r.kind == kind)
        .collect();
    let failed_folds = results.iter().filter(|r| r.failure.is_some()).count();
    let errors: Vec<f64> = results
        .iter()
        .flat_map(|r| r.residuals.iter().map(|e| e.error))
        .collect();
    let n = errors.len();
    let stat = |f: &dyn Fn(f64) -> f64| (n > 0).then(|| errors.iter().map(|&e| f(e)).sum::<f64>() / n as f64);
    KindAggregate {
        kind,
        rmse: stat(&|e| e * e).map(f64::sqrt),
        mae: stat(&f64::abs),
        mean_signed_error: stat(&|e| e),
        n_residuals: n,
        failed_folds,
    }
}

fn failed(patient_id: &str, kind: PredictorKind, history_len: usize, e: &Error) -> FoldResult {
    FoldResult {
        patient_id: patient_id.to_string(),
        kind,
        history_len,
        residuals: Vec::new(),
        failure: Some(format!("{}: {e}", e.kind())),
    }
}

/// Leave-one-out cross-validation over the eligible patients of `group`.
///
/// Each eligible patient is held out in turn; mixed and in-class predictors
/// are trained on the remaining patients of the group, the out-class
/// predictor on the whole other group. Folds come out in `patient_id`
/// order whatever order they finish in.
pub fn loocv(
    cohort: &Cohort,
    feature: Feature,
    spec: &ModelSpec,
    kinds: &[PredictorKind],
    group: Group,
    opts: &CvOptions,
) -> Result<CvReport> {
    spec.validate()?;
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Error::Validation("no predictor kinds requested".into()));
    }
    if opts.history_len == Some(0) {
        return Err(Error::Validation("history length must be >= 1".into()));
    }

    let group_cohort = cohort.select_group(group);
    let mut eligible: Vec<&str> = group_cohort
        .patients()
        .iter()
        .filter(|p| p.observation_count(feature) >= MIN_ELIGIBLE_OBS)
        .map(|p| p.patient_id.as_str())
        .collect();
    eligible.sort_unstable();
    if eligible.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "LOOCV needs >= 3 {group} patients with >= {MIN_ELIGIBLE_OBS} '{feature}' observations, got {}",
            eligible.len()
        )));
    }

    let out_class: Option<Result<TrainedPredictor>> = kinds
        .contains(&PredictorKind::OutClassFixed)
        .then(|| train(cohort, feature, spec, PredictorKind::OutClassFixed, group, &opts.em));

    let folds: Vec<Fold> = eligible
        .par_iter()
        .map(|&id| {
            let series = group_cohort
                .patient(id)
                .and_then(|p| p.series(feature))
                .expect("eligible patients hold the feature");
            let n = series.len();
            let h = opts.history_len.unwrap_or(n - 1).min(n - 1);
            let history = series.prefix(h).expect("1 <= h < n");
            let targets = &series.observations()[h..];
            let request = PredictionRequest {
                history: Some(history),
                target_times: targets.iter().map(|o| o.time).collect(),
                group,
                mode: opts.mode,
            };
            let training = group_cohort.without_patient(id);

            let results = kinds
                .iter()
                .map(|&kind| {
                    let trained = match kind {
                        PredictorKind::OutClassFixed => match out_class.as_ref().expect("trained above") {
                            Ok(p) => Ok(p.clone()),
                            Err(e) => Err(Error::InsufficientData(e.to_string())),
                        },
                        _ => train(&training, feature, spec, kind, group, &opts.em),
                    };
                    let forecast = trained.and_then(|p| p.forecast(&request));
                    match forecast {
                        Ok(f) => FoldResult {
                            patient_id: id.to_string(),
                            kind,
                            history_len: h,
                            residuals: f
                                .predictions
                                .iter()
                                .zip(targets)
                                .map(|(p, o)| Residual {
                                    time: o.time,
                                    actual: o.value,
                                    predicted: p.value,
                                    error: p.value - o.value,
                                })
                                .collect(),
                            failure: None,
                        },
                        Err(e) => failed(id, kind, h, &e),
                    }
                })
                .collect();
            Fold {
                patient_id: id.to_string(),
                results,
            }
        })
        .collect();

    let aggregates = kinds.iter().map(|&k| aggregate(k, &folds)).collect();
    Ok(CvReport {
        schema_version: crate::SCHEMA_VERSION,
        feature,
        group,
        spec: spec.clone(),
        mode: opts.mode,
        history_len: opts.history_len,
        kinds,
        folds,
        aggregates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerCount {
    pub kind: PredictorKind,
    pub wins: usize,
}

/// One input report's aggregates and per-patient winner counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub group: Group,
    pub mode: PredictionMode,
    pub aggregates: Vec<KindAggregate>,
    pub winners: Vec<WinnerCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schema_version: u32,
    pub feature: Feature,
    pub spec: ModelSpec,
    pub columns: Vec<ComparisonColumn>,
}

/// Kind with the smallest mean absolute error on a fold; ties go to the
/// earlier kind.
fn fold_winner(fold: &Fold) -> Option<PredictorKind> {
    fold.results
        .iter()
        .filter(|r| r.failure.is_none() && !r.residuals.is_empty())
        .map(|r| {
            let mae = r.residuals.iter().map(|e| e.error.abs()).sum::<f64>() / r.residuals.len() as f64;
            (r.kind, mae)
        })
        .fold(None, |best: Option<(PredictorKind, f64)>, (k, m)| match best {
            Some((_, bm)) if bm <= m => best,
            _ => Some((k, m)),
        })
        .map(|(k, _)| k)
}

pub fn compare_report(reports: &[CvReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to compare".into()))?;
    for r in &reports[1..] {
        if r.feature != first.feature || r.spec != first.spec {
            return Err(Error::Mismatch(format!(
                "report for '{}' / {:?} cannot be compared with '{}' / {:?}",
                r.feature, r.spec, first.feature, first.spec
            )));
        }
    }
    let columns = reports
        .iter()
        .map(|r| {
            let winners = r
                .kinds
                .iter()
                .map(|&kind| WinnerCount {
                    kind,
                    wins: r.folds.iter().filter(|f| fold_winner(f) == Some(kind)).count(),
                })
                .collect();
            ComparisonColumn {
                group: r.group,
                mode: r.mode,
                aggregates: r.aggregates.clone(),
                winners,
            }
        })
        .collect();
    Ok(ComparisonTable {
        schema_version: crate::SCHEMA_VERSION,
        feature: first.feature,
        spec: first.spec.clone(),
        columns,
    })
}
