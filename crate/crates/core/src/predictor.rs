//! Two-phase predictors. Training fits a population curve (and, for the
//! mixed kind, per-patient random effects) on one outcome group; prediction
//! takes a new patient's observed history and forecasts later values.
//!
//! `OutClassFixed` predicts a patient with the fixed model of the opposite
//! outcome group.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Feature, FeatureSeries, Group, PatientRecord};
use crate::error::{Error, Result};
use crate::model::{fit_fixed, fit_mixed, EmOptions, FittedFixedModel, FittedMixedModel, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Mixed,
    InClassFixed,
    OutClassFixed,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [
        PredictorKind::Mixed,
        PredictorKind::InClassFixed,
        PredictorKind::OutClassFixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Mixed => "mixed",
            PredictorKind::InClassFixed => "in_class_fixed",
            PredictorKind::OutClassFixed => "out_class_fixed",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown predictor kind '{s}'")))
    }
}

/// How a mixed predictor treats a newcomer's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Refit every parameter with the newcomer added as one more patient,
    /// then read its random effect from the refit.
    #[default]
    RefitG,
    /// Keep the trained parameters and compute the newcomer's BLUP.
    FrozenG,
}

impl PredictionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionMode::RefitG => "refit_g",
            PredictionMode::FrozenG => "frozen_g",
        }
    }
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refit_g" => Ok(PredictionMode::RefitG),
            "frozen_g" => Ok(PredictionMode::FrozenG),
            _ => Err(Error::Validation(format!("unknown prediction mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    /// The newcomer's observed prefix; required by the mixed kind.
    pub history: Option<FeatureSeries>,
    pub target_times: Vec<f64>,
    pub group: Group,
    pub mode: PredictionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedValue {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub schema_version: u32,
    pub kind: PredictorKind,
    pub mode: PredictionMode,
    pub group: Group,
    pub feature: Feature,
    pub predictions: Vec<TimedValue>,
    /// The newcomer's random effect (mixed kind only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_effect: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Trained {
    Mixed {
        model: FittedMixedModel,
        training: Cohort,
    },
    Fixed(FittedFixedModel),
}

/// A trained predictor. Immutable; forecasting never modifies it.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    kind: PredictorKind,
    group: Group,
    feature: Feature,
    opts: EmOptions,
    trained: Trained,
}

/// Fits the predictor of `kind` for patients of `group`.
pub fn train(
    cohort: &Cohort,
    feature: Feature,
    spec: &ModelSpec,
    kind: PredictorKind,
    group: Group,
    opts: &EmOptions,
) -> Result<TrainedPredictor> {
    let trained = match kind {
        PredictorKind::Mixed => {
            let training = cohort.select_group(group);
            let model = fit_mixed(&training, feature, spec, opts)?;
            Trained::Mixed { model, training }
        }
        PredictorKind::InClassFixed => {
            Trained::Fixed(fit_fixed(&cohort.select_group(group), feature, spec)?)
        }
        PredictorKind::OutClassFixed => {
            Trained::Fixed(fit_fixed(&cohort.select_group(group.other()), feature, spec)?)
        }
    };
    Ok(TrainedPredictor {
        kind,
        group,
        feature,
        opts: *opts,
        trained,
    })
}

impl TrainedPredictor {
    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    /// The group whose patients this predictor forecasts.
    pub fn group(&self) -> Group {
        self.group
    }

    pub fn feature(&self) -> Feature {
        self.feature
    }

    pub fn mixed_model(&self) -> Option<&FittedMixedModel> {
        match &self.trained {
            Trained::Mixed { model, .. } => Some(model),
            Trained::Fixed(_) => None,
        }
    }

    pub fn fixed_model(&self) -> Option<&FittedFixedModel> {
        match &self.trained {
            Trained::Fixed(m) => Some(m),
            Trained::Mixed { .. } => None,
        }
    }

    pub fn forecast(&self, request: &PredictionRequest) -> Result<Forecast> {
        if let Some(t) = request.target_times.iter().find(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("target time {t} is not finite")));
        }
        if let Some(h) = &request.history {
            if h.feature() != self.feature {
                return Err(Error::Mismatch(format!(
                    "history holds '{}', predictor was trained on '{}'",
                    h.feature(),
                    self.feature
                )));
            }
        }
        let (predictions, random_effect) = match &self.trained {
            Trained::Fixed(model) => (
                request
                    .target_times
                    .iter()
                    .map(|&time| TimedValue {
                        time,
                        value: model.predict(time),
                    })
                    .collect(),
                None,
            ),
            Trained::Mixed { model, training } => {
                let history = request.history.as_ref().ok_or(Error::EmptyHistory)?;
                let (model, b) = match request.mode {
                    PredictionMode::FrozenG => (model.clone(), model.blup(history)?),
                    PredictionMode::RefitG => self.refit(model, training, history)?,
                };
                let values = request
                    .target_times
                    .iter()
                    .map(|&time| TimedValue {
                        time,
                        value: model.predict(Some(&b), time),
                    })
                    .collect();
                (values, Some(b))
            }
        };
        Ok(Forecast {
            schema_version: crate::SCHEMA_VERSION,
            kind: self.kind,
            mode: request.mode,
            group: request.group,
            feature: self.feature,
            predictions,
            random_effect,
        })
    }

    fn refit(
        &self,
        model: &FittedMixedModel,
        training: &Cohort,
        history: &FeatureSeries,
    ) -> Result<(FittedMixedModel, Vec<f64>)> {
        let mut id = String::from("newcomer");
        while training.patient(&id).is_some() {
            id.push('_');
        }
        let record = PatientRecord::new(id.clone(), self.group).with_series(history.clone());
        let augmented = training.with_patient(record)?;
        let refit = fit_mixed(&augmented, self.feature, &model.spec, &self.opts)?;
        let b = refit.blups.get(&id).cloned().ok_or_else(|| {
            Error::Numerical("refit produced no random effect for the newcomer".into())
        })?;
        Ok((refit, b))
    }
}
