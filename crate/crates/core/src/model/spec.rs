use serde::{Deserialize, Serialize};

use crate::cohort::DEFAULT_PROTOCOL_HORIZON;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `[1, t̃]`
    Linear,
    /// `[1, t̃, t̃²]`
    #[serde(alias = "poly2")]
    Polynomial2,
}

impl Basis {
    pub fn terms(self) -> &'static [Term] {
        match self {
            Basis::Linear => &[Term::Intercept, Term::Slope],
            Basis::Polynomial2 => &[Term::Intercept, Term::Slope, Term::Quadratic],
        }
    }

    pub fn size(self) -> usize {
        self.terms().len()
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Basis::Linear),
            "poly2" | "polynomial2" => Ok(Basis::Polynomial2),
            _ => Err(Error::Validation(format!("unknown basis '{s}'"))),
        }
    }
}

/// A regressor column; discriminant is its position in the design row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept = 0,
    Slope = 1,
    Quadratic = 2,
}

impl Term {
    pub fn column(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub basis: Basis,
    /// Terms carrying a per-patient random effect, in basis order.
    pub random_terms: Vec<Term>,
    /// Raw weeks are divided by this before entering the design.
    pub time_scale: f64,
}

impl ModelSpec {
    /// All basis terms random, time normalized by the default horizon.
    pub fn new(basis: Basis) -> Self {
        Self {
            basis,
            random_terms: basis.terms().to_vec(),
            time_scale: DEFAULT_PROTOCOL_HORIZON,
        }
    }

    pub fn with_time_scale(mut self, time_scale: f64) -> Self {
        self.time_scale = time_scale;
        self
    }

    pub fn with_random_terms(mut self, mut terms: Vec<Term>) -> Self {
        terms.sort();
        terms.dedup();
        self.random_terms = terms;
        self
    }

    pub fn n_fixed(&self) -> usize {
        self.basis.size()
    }

    pub fn n_random(&self) -> usize {
        self.random_terms.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::Validation(format!(
                "time_scale must be positive, got {}",
                self.time_scale
            )));
        }
        let terms = self.basis.terms();
        if let Some(t) = self.random_terms.iter().find(|t| !terms.contains(t)) {
            return Err(Error::Validation(format!(
                "random term {t:?} is not in the {:?} basis",
                self.basis
            )));
        }
        if self.random_terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "random terms must be distinct and in basis order".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn validate_mixed(&self) -> Result<()> {
        self.validate()?;
        if self.random_terms.is_empty() {
            return Err(Error::Validation("mixed model needs at least one random term".into()));
        }
        Ok(())
    }

    /// Fixed-effect regressors at `time` weeks.
    pub fn design_row(&self, time: f64) -> Vec<f64> {
        let t = time / self.time_scale;
        match self.basis {
            Basis::Linear => vec![1.0, t],
            Basis::Polynomial2 => vec![1.0, t, t * t],
        }
    }

    /// Random-effect regressors at `time` weeks.
    pub fn random_row(&self, time: f64) -> Vec<f64> {
        let x = self.design_row(time);
        self.random_terms.iter().map(|t| x[t.column()]).collect()
    }
}

/// Free-function form of [`ModelSpec::design_row`].
pub fn design_row(spec: &ModelSpec, time: f64) -> Vec<f64> {
    spec.design_row(time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_rows() {
        let lin = ModelSpec::new(Basis::Linear).with_time_scale(6.0);
        assert_eq!(design_row(&lin, 6.0), vec![1.0, 1.0]);
        let quad = ModelSpec::new(Basis::Polynomial2).with_time_scale(6.0);
        assert_eq!(design_row(&quad, 0.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(design_row(&quad, 3.0), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn random_row_selects_terms() {
        let s = ModelSpec::new(Basis::Polynomial2)
            .with_time_scale(2.0)
            .with_random_terms(vec![Term::Quadratic, Term::Intercept]);
        assert_eq!(s.random_row(1.0), vec![1.0, 0.25]);
    }

    #[test]
    fn validation() {
        assert!(ModelSpec::new(Basis::Linear).with_time_scale(0.0).validate().is_err());
        let bad = ModelSpec::new(Basis::Linear).with_random_terms(vec![Term::Quadratic]);
        assert!(bad.validate().is_err());
        let none = ModelSpec::new(Basis::Linear).with_random_terms(vec![]);
        assert!(none.validate().is_ok());
        assert!(none.validate_mixed().is_err());
    }
}
