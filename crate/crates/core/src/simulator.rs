//! Synthetic cohorts with known ground truth.
//!
//! Randomness comes from a single `ChaCha20Rng` seeded with
//! `seed_from_u64(seed)` and consumed in a fixed order (group, then patient,
//! then random effect, visit count, visit subset, noise), so a seed
//! reproduces the same cohort on every platform.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Feature, FeatureSeries, Group, PatientRecord};
use crate::error::{Error, Result};
use crate::model::{Basis, ModelSpec};

pub const RNG_NAME: &str = "ChaCha20Rng::seed_from_u64 (rand_chacha 0.9)";

/// Parameters of the growth curve `y₀ + e^{−d·t} + g·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurveParams {
    pub y0: f64,
    /// Decay rate, strictly positive.
    pub d: f64,
    /// Regrowth slope.
    pub g: f64,
}

impl GrowthCurveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.y0.is_finite() && self.g.is_finite() && self.d.is_finite()) {
            return Err(Error::Spec("growth parameters must be finite".into()));
        }
        if self.d <= 0.0 {
            return Err(Error::Spec(format!("decay rate must be positive, got {}", self.d)));
        }
        Ok(())
    }
}

/// `y₀ + e^{−d·t} + g·t`, the additive form.
pub fn growth_curve(params: &GrowthCurveParams, time: f64) -> f64 {
    params.y0 + (-params.d * time).exp() + params.g * time
}

/// `y₀·e^{−d·t} + g·t`, the multiplicative-decay variant.
pub fn growth_curve_multiplicative(params: &GrowthCurveParams, time: f64) -> f64 {
    params.y0 * (-params.d * time).exp() + params.g * time
}

/// Solution of `dy/dt = y₀ + e^{−d·t} + g·t` with `y(0) = y_init`.
pub fn growth_curve_ode(params: &GrowthCurveParams, y_init: f64, time: f64) -> f64 {
    let d = params.d;
    y_init + params.y0 * time + (-(-d * time).exp_m1()) / d + 0.5 * params.g * time * time
}

/// Solution of `dy/dt = y₀·e^{−d·t} + g·t` with `y(0) = y_init`.
pub fn growth_curve_ode_multiplicative(params: &GrowthCurveParams, y_init: f64, time: f64) -> f64 {
    let d = params.d;
    y_init + params.y0 * (-(-d * time).exp_m1()) / d + 0.5 * params.g * time * time
}

/// Per-group truth for the mixed families; time enters as `t / horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedTruth {
    pub beta: Vec<f64>,
    /// Row-major, `q × q` with `q = beta.len()`.
    pub psi: Vec<f64>,
    pub sigma2: f64,
}

impl MixedTruth {
    pub fn new(beta: Vec<f64>, psi_diag: &[f64], sigma2: f64) -> Self {
        let q = psi_diag.len();
        let mut psi = vec![0.0; q * q];
        for (i, v) in psi_diag.iter().enumerate() {
            psi[i * q + i] = *v;
        }
        Self { beta, psi, sigma2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthForm {
    Algebraic,
    Differential,
}

/// Per-group truth for the growth-curve family. Each patient draws
/// `y₀ + sd·z`, `d·exp(sd·z)` and `g + sd·z` from independent normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTruth {
    pub params: GrowthCurveParams,
    pub spread: GrowthCurveParams,
    /// Starting value for the differential form.
    pub y_init: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    MixedLinear {
        survived: MixedTruth,
        deceased: MixedTruth,
    },
    MixedPoly2 {
        survived: MixedTruth,
        deceased: MixedTruth,
    },
    GrowthCurve {
        form: GrowthForm,
        multiplicative_decay: bool,
        survived: GrowthTruth,
        deceased: GrowthTruth,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::MixedLinear { .. } => "mixed_linear",
            Family::MixedPoly2 { .. } => "mixed_poly2",
            Family::GrowthCurve { .. } => "growth_curve",
        }
    }

    fn basis(&self) -> Option<Basis> {
        match self {
            Family::MixedLinear { .. } => Some(Basis::Linear),
            Family::MixedPoly2 { .. } => Some(Basis::Polynomial2),
            Family::GrowthCurve { .. } => None,
        }
    }

    fn mixed_truth(&self, group: Group) -> Option<&MixedTruth> {
        match self {
            Family::MixedLinear { survived, deceased } | Family::MixedPoly2 { survived, deceased } => {
                Some(match group {
                    Group::Survived => survived,
                    Group::Deceased => deceased,
                })
            }
            Family::GrowthCurve { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_per_group: usize,
    pub horizon_weeks: f64,
    pub visit_times: Vec<f64>,
    pub min_obs: usize,
    pub feature: Feature,
    #[serde(flatten)]
    pub family: Family,
    pub seed: u64,
}

impl Default for CohortSpec {
    /// 19 patients per group, weekly visits over 6 weeks, quadratic
    /// volume trajectories. Magnitudes are illustrative.
    fn default() -> Self {
        Self {
            n_per_group: 19,
            horizon_weeks: 6.0,
            visit_times: (0..=6).map(f64::from).collect(),
            min_obs: 3,
            feature: Feature::Volume,
            family: Family::MixedPoly2 {
                survived: MixedTruth::new(vec![40.0, -30.0, 12.0], &[25.0, 36.0, 9.0], 4.0),
                deceased: MixedTruth::new(vec![45.0, -20.0, 15.0], &[25.0, 36.0, 9.0], 4.0),
            },
            seed: 0,
        }
    }
}

impl CohortSpec {
    /// Linear family with the same truth in both groups.
    pub fn mixed_linear(truth: MixedTruth) -> Self {
        Self {
            family: Family::MixedLinear {
                survived: truth.clone(),
                deceased: truth,
            },
            ..Self::default()
        }
    }

    /// Quadratic family with the same truth in both groups.
    pub fn mixed_poly2(truth: MixedTruth) -> Self {
        Self {
            family: Family::MixedPoly2 {
                survived: truth.clone(),
                deceased: truth,
            },
            ..Self::default()
        }
    }

    pub fn growth_curve(form: GrowthForm, truth: GrowthTruth) -> Self {
        Self {
            family: Family::GrowthCurve {
                form,
                multiplicative_decay: false,
                survived: truth.clone(),
                deceased: truth,
            },
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_per_group(mut self, n: usize) -> Self {
        self.n_per_group = n;
        self
    }

    /// Every patient keeps every visit.
    pub fn without_missingness(mut self) -> Self {
        self.min_obs = self.visit_times.len();
        self
    }

    /// The model spec whose design matches the mixed families' mean curve.
    pub fn model_spec(&self, basis: Basis) -> ModelSpec {
        ModelSpec::new(basis).with_time_scale(self.horizon_weeks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_group == 0 {
            return Err(Error::Spec("n_per_group must be >= 1".into()));
        }
        if !(self.horizon_weeks.is_finite() && self.horizon_weeks > 0.0) {
            return Err(Error::Spec("horizon_weeks must be positive".into()));
        }
        if self.visit_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Spec("visit times must be finite and non-negative".into()));
        }
        if self.visit_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spec("visit times must be strictly increasing".into()));
        }
        if self
            .visit_times
            .iter()
            .any(|&t| t > self.horizon_weeks * crate::cohort::HORIZON_SLACK)
        {
            return Err(Error::Spec("visit time beyond the protocol horizon bound".into()));
        }
        if self.min_obs < 3 || self.min_obs > self.visit_times.len() {
            return Err(Error::Spec(format!(
                "min_obs must lie in [3, {}], got {}",
                self.visit_times.len(),
                self.min_obs
            )));
        }
        match &self.family {
            Family::MixedLinear { survived, deceased } | Family::MixedPoly2 { survived, deceased } => {
                let p = self.family.basis().expect("mixed family").size();
                for t in [survived, deceased] {
                    validate_mixed_truth(t, p)?;
                }
            }
            Family::GrowthCurve { survived, deceased, .. } => {
                for t in [survived, deceased] {
                    t.params.validate()?;
                    let s = &t.spread;
                    if [s.y0, s.d, s.g].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(Error::Spec("growth spreads must be finite and >= 0".into()));
                    }
                    if !(t.sigma2.is_finite() && t.sigma2 >= 0.0) || !t.y_init.is_finite() {
                        return Err(Error::Spec("sigma2 must be >= 0 and y_init finite".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

fn validate_mixed_truth(t: &MixedTruth, p: usize) -> Result<()> {
    if t.beta.len() != p || t.psi.len() != p * p {
        return Err(Error::Spec(format!(
            "expected {p} beta and {} psi entries, got {} and {}",
            p * p,
            t.beta.len(),
            t.psi.len()
        )));
    }
    if t.beta.iter().chain(&t.psi).any(|v| !v.is_finite()) {
        return Err(Error::Spec("true parameters must be finite".into()));
    }
    if !(t.sigma2.is_finite() && t.sigma2 >= 0.0) {
        return Err(Error::Spec(format!("sigma2 must be >= 0, got {}", t.sigma2)));
    }
    let psi = DMatrix::from_row_slice(p, p, &t.psi);
    if (&psi - psi.transpose()).abs().max() > 0.0 {
        return Err(Error::Spec("psi must be symmetric".into()));
    }
    let min_eig = SymmetricEigen::new(psi.clone()).eigenvalues.min();
    if min_eig < -1e-12 * psi.trace().abs().max(1.0) {
        return Err(Error::Spec("psi must be positive semidefinite".into()));
    }
    Ok(())
}

/// Factor `L` with `L Lᵀ = Ψ` for a PSD `Ψ`.
fn psd_factor(psi: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = nalgebra::Cholesky::new(psi.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(psi.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub group: Group,
    /// `bᵢ` for the mixed families.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_effect: Option<Vec<f64>>,
    /// Per-patient curve parameters for the growth family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_params: Option<GrowthCurveParams>,
    pub visit_times: Vec<f64>,
    /// Noise-free trajectory at the kept visits.
    pub mean_values: Vec<f64>,
}

impl PatientTruth {
    /// Noise-free value of this patient's trajectory at any time.
    pub fn trajectory(&self, spec: &CohortSpec, time: f64) -> f64 {
        match &spec.family {
            Family::MixedLinear { .. } | Family::MixedPoly2 { .. } => {
                let truth = spec.family.mixed_truth(self.group).expect("mixed family");
                let model = spec.model_spec(spec.family.basis().expect("mixed family"));
                let b = self.random_effect.as_deref().unwrap_or(&[]);
                model
                    .design_row(time)
                    .iter()
                    .enumerate()
                    .map(|(k, x)| x * (truth.beta[k] + b.get(k).copied().unwrap_or(0.0)))
                    .sum()
            }
            Family::GrowthCurve {
                form,
                multiplicative_decay,
                survived,
                deceased,
            } => {
                let y_init = match self.group {
                    Group::Survived => survived.y_init,
                    Group::Deceased => deceased.y_init,
                };
                let p = self.growth_params.expect("growth family");
                evaluate_growth(*form, *multiplicative_decay, &p, y_init, time)
            }
        }
    }
}

fn evaluate_growth(form: GrowthForm, multiplicative: bool, p: &GrowthCurveParams, y_init: f64, t: f64) -> f64 {
    match (form, multiplicative) {
        (GrowthForm::Algebraic, false) => growth_curve(p, t),
        (GrowthForm::Algebraic, true) => growth_curve_multiplicative(p, t),
        (GrowthForm::Differential, false) => growth_curve_ode(p, y_init, t),
        (GrowthForm::Differential, true) => growth_curve_ode_multiplicative(p, y_init, t),
    }
}

/// The `truth.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub rng: String,
    pub spec: CohortSpec,
    pub patients: Vec<PatientTruth>,
}

impl GroundTruth {
    pub fn patient(&self, patient_id: &str) -> Option<&PatientTruth> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }
}

fn patient_id(group: Group, i: usize, n: usize) -> String {
    let width = n.to_string().len().max(2);
    let prefix = match group {
        Group::Survived => 's',
        Group::Deceased => 'd',
    };
    format!("{prefix}{:0width$}", i + 1)
}

/// Draws a cohort from `spec`. Deterministic in `spec.seed`.
pub fn simulate_cohort(spec: &CohortSpec) -> Result<(Cohort, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n_visits = spec.visit_times.len();
    let mut patients = Vec::with_capacity(2 * spec.n_per_group);
    let mut truths = Vec::with_capacity(2 * spec.n_per_group);

    for group in Group::ALL {
        let mixed = spec.family.mixed_truth(group).map(|t| {
            let q = t.beta.len();
            (t, psd_factor(&DMatrix::from_row_slice(q, q, &t.psi)))
        });
        for i in 0..spec.n_per_group {
            let id = patient_id(group, i, spec.n_per_group);
            let mut truth = PatientTruth {
                patient_id: id.clone(),
                group,
                random_effect: None,
                growth_params: None,
                visit_times: Vec::new(),
                mean_values: Vec::new(),
            };
            let sigma = match (&mixed, &spec.family) {
                (Some((t, factor)), _) => {
                    let z = DVector::from_iterator(
                        t.beta.len(),
                        (0..t.beta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                    );
                    truth.random_effect = Some((factor * z).iter().copied().collect());
                    t.sigma2.sqrt()
                }
                (None, Family::GrowthCurve { survived, deceased, .. }) => {
                    let t = match group {
                        Group::Survived => survived,
                        Group::Deceased => deceased,
                    };
                    let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    truth.growth_params = Some(GrowthCurveParams {
                        y0: t.params.y0 + t.spread.y0 * z[0],
                        d: t.params.d * (t.spread.d * z[1]).exp(),
                        g: t.params.g + t.spread.g * z[2],
                    });
                    t.sigma2.sqrt()
                }
                (None, _) => unreachable!("mixed families always carry truth"),
            };

            let keep = rng.random_range(spec.min_obs..=n_visits);
            let mut kept = index::sample(&mut rng, n_visits, keep).into_vec();
            kept.sort_unstable();
            let mut values = Vec::with_capacity(keep);
            for &v in &kept {
                let t = spec.visit_times[v];
                let mean = truth.trajectory(spec, t);
                let noise: f64 = rng.sample(StandardNormal);
                truth.visit_times.push(t);
                truth.mean_values.push(mean);
                values.push(mean + sigma * noise);
            }
            let series = FeatureSeries::from_pairs(spec.feature, &truth.visit_times, &values)?;
            patients.push(PatientRecord::new(id, group).with_series(series));
            truths.push(truth);
        }
    }

    let cohort = Cohort::new(patients, spec.horizon_weeks)?;
    let truth = GroundTruth {
        schema_version: crate::SCHEMA_VERSION,
        rng: RNG_NAME.to_string(),
        spec: spec.clone(),
        patients: truths,
    };
    Ok((cohort, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_curve_values() {
        let p = GrowthCurveParams { y0: 2.0, d: 0.5, g: 0.3 };
        assert_eq!(growth_curve(&p, 0.0), 3.0);
        let fast = GrowthCurveParams { d: 1e3, ..p };
        assert!((growth_curve(&fast, 1.0) - (p.y0 + p.g)).abs() < 1e-6);
    }

    #[test]
    fn growth_ode_values() {
        let p = GrowthCurveParams { y0: 1.0, d: 2.0, g: 3.0 };
        assert_eq!(growth_curve_ode(&p, 5.0, 0.0), 5.0);
        let unit = GrowthCurveParams { y0: 0.0, d: 1.0, g: 0.0 };
        assert!((growth_curve_ode(&unit, 0.0, 1.0) - 0.6321205588).abs() < 1e-10);
    }

    #[test]
    fn default_cohort_shape() {
        let (c, truth) = simulate_cohort(&CohortSpec::default()).unwrap();
        assert_eq!(c.len(), 38);
        assert_eq!(c.select_group(Group::Survived).len(), 19);
        assert_eq!(c.select_group(Group::Deceased).len(), 19);
        for n in c.observation_counts(Feature::Volume).values() {
            assert!((3..=7).contains(n));
        }
        assert_eq!(truth.patients.len(), 38);
    }

    #[test]
    fn degenerate_generation_lies_on_mean_curve() {
        let spec = CohortSpec::mixed_linear(MixedTruth::new(vec![10.0, -1.0], &[0.0, 0.0], 0.0));
        let (c, _) = simulate_cohort(&spec).unwrap();
        for p in c.patients() {
            for o in p.series(Feature::Volume).unwrap().observations() {
                assert_eq!(o.value, 10.0 - o.time / 6.0);
            }
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let spec = CohortSpec::default().with_seed(42);
        let (a, ta) = simulate_cohort(&spec).unwrap();
        let (b, tb) = simulate_cohort(&spec).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(ta, tb);
        let (c, _) = simulate_cohort(&spec.with_seed(43)).unwrap();
        assert_ne!(a.to_csv_string(), c.to_csv_string());
    }

    #[test]
    fn invalid_specs() {
        let mut s = CohortSpec::default();
        s.min_obs = 2;
        assert!(matches!(simulate_cohort(&s), Err(Error::Spec(_))));
        let s = CohortSpec::mixed_linear(MixedTruth::new(vec![1.0, 1.0], &[1.0, -1.0], 1.0));
        assert!(s.validate().is_err());
        let s = CohortSpec::mixed_linear(MixedTruth::new(vec![1.0], &[1.0], 1.0));
        assert!(s.validate().is_err());
        let bad_growth = GrowthTruth {
            params: GrowthCurveParams { y0: 1.0, d: 0.0, g: 0.0 },
            spread: GrowthCurveParams { y0: 0.0, d: 0.0, g: 0.0 },
            y_init: 0.0,
            sigma2: 0.1,
        };
        assert!(CohortSpec::growth_curve(GrowthForm::Algebraic, bad_growth).validate().is_err());
    }

    #[test]
    fn growth_family_generates() {
        let t = GrowthTruth {
            params: GrowthCurveParams { y0: 30.0, d: 0.8, g: 1.5 },
            spread: GrowthCurveParams { y0: 3.0, d: 0.2, g: 0.3 },
            y_init: 30.0,
            sigma2: 0.25,
        };
        for form in [GrowthForm::Algebraic, GrowthForm::Differential] {
            let (c, truth) = simulate_cohort(&CohortSpec::growth_curve(form, t.clone())).unwrap();
            assert_eq!(c.len(), 38);
            assert!(truth.patients.iter().all(|p| p.growth_params.unwrap().d > 0.0));
        }
    }
}
