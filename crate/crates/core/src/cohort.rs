//! Grouped longitudinal feature observations and their long-format CSV
//! interchange (`patient_id,group,time_weeks,feature,value`).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default imaging protocol length in weeks.
pub const DEFAULT_PROTOCOL_HORIZON: f64 = 6.0;

/// Observation times may exceed the protocol horizon by at most this factor.
pub const HORIZON_SLACK: f64 = 1.5;

pub const CSV_HEADER: [&str; 5] = ["patient_id", "group", "time_weeks", "feature", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Volume,
    JacobianMean,
    JacobianVariance,
    JacobianSkewness,
    JacobianKurtosis,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Volume,
        Feature::JacobianMean,
        Feature::JacobianVariance,
        Feature::JacobianSkewness,
        Feature::JacobianKurtosis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Volume => "volume",
            Feature::JacobianMean => "jacobian_mean",
            Feature::JacobianVariance => "jacobian_variance",
            Feature::JacobianSkewness => "jacobian_skewness",
            Feature::JacobianKurtosis => "jacobian_kurtosis",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown feature '{s}'")))
    }
}

/// Treatment outcome label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Survived,
    Deceased,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Survived, Group::Deceased];

    pub fn other(self) -> Group {
        match self {
            Group::Survived => Group::Deceased,
            Group::Deceased => Group::Survived,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Survived => "survived",
            Group::Deceased => "deceased",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "survived" => Ok(Group::Survived),
            "deceased" => Ok(Group::Deceased),
            _ => Err(Error::Validation(format!("unknown group label '{s}'"))),
        }
    }
}

/// One measurement: weeks since treatment start and the feature value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }

    fn validate(&self) -> Result<()> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(Error::Validation(format!(
                "observation time must be finite and non-negative, got {}",
                self.time
            )));
        }
        if !self.value.is_finite() {
            return Err(Error::Validation(format!(
                "observation value must be finite, got {}",
                self.value
            )));
        }
        Ok(())
    }
}

/// Time-ordered observations of a single feature for a single patient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSeries {
    feature: Feature,
    observations: Vec<Observation>,
}

impl FeatureSeries {
    /// Builds a series, sorting by time. Duplicate times, non-finite values,
    /// negative times and empty input are rejected.
    pub fn new(feature: Feature, mut observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Validation(format!(
                "series for feature '{feature}' has no observations"
            )));
        }
        for obs in &observations {
            obs.validate()?;
        }
        observations.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = observations.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(Error::Validation(format!(
                "duplicate time {} in series for feature '{feature}'",
                w[0].time
            )));
        }
        Ok(Self {
            feature,
            observations,
        })
    }

    pub fn from_pairs(feature: Feature, times: &[f64], values: &[f64]) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        let obs = times
            .iter()
            .zip(values)
            .map(|(&t, &v)| Observation::new(t, v))
            .collect();
        Self::new(feature, obs)
    }

    pub fn feature(&self) -> Feature {
        self.feature
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.time)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.value)
    }

    /// First `len` observations, or `None` when that would be empty or
    /// longer than the series.
    pub fn prefix(&self, len: usize) -> Option<FeatureSeries> {
        (len >= 1 && len <= self.observations.len()).then(|| FeatureSeries {
            feature: self.feature,
            observations: self.observations[..len].to_vec(),
        })
    }
}

impl<'de> Deserialize<'de> for FeatureSeries {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            feature: Feature,
            observations: Vec<Observation>,
        }
        let raw = Raw::deserialize(d)?;
        FeatureSeries::new(raw.feature, raw.observations).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub group: Group,
    pub series: BTreeMap<Feature, FeatureSeries>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, group: Group) -> Self {
        Self {
            patient_id: patient_id.into(),
            group,
            series: BTreeMap::new(),
        }
    }

    pub fn with_series(mut self, series: FeatureSeries) -> Self {
        self.series.insert(series.feature(), series);
        self
    }

    pub fn series(&self, feature: Feature) -> Option<&FeatureSeries> {
        self.series.get(&feature)
    }

    pub fn observation_count(&self, feature: Feature) -> usize {
        self.series.get(&feature).map_or(0, FeatureSeries::len)
    }
}

/// An immutable, validated collection of patients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    protocol_horizon: f64,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>, protocol_horizon: f64) -> Result<Self> {
        if !(protocol_horizon.is_finite() && protocol_horizon > 0.0) {
            return Err(Error::Validation(format!(
                "protocol horizon must be positive, got {protocol_horizon}"
            )));
        }
        let limit = protocol_horizon * HORIZON_SLACK;
        let mut seen = std::collections::BTreeSet::new();
        for p in &patients {
            if p.patient_id.is_empty() {
                return Err(Error::Validation("empty patient_id".into()));
            }
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate patient_id '{}'",
                    p.patient_id
                )));
            }
            for (feature, s) in &p.series {
                if *feature != s.feature() {
                    return Err(Error::Validation(format!(
                        "patient '{}': series keyed as '{feature}' holds '{}'",
                        p.patient_id,
                        s.feature()
                    )));
                }
                if s.is_empty() {
                    return Err(Error::Validation(format!(
                        "patient '{}': empty '{feature}' series",
                        p.patient_id
                    )));
                }
                if let Some(o) = s.observations().iter().find(|o| o.time > limit) {
                    return Err(Error::Validation(format!(
                        "patient '{}': time {} exceeds {HORIZON_SLACK} x protocol horizon {protocol_horizon}",
                        p.patient_id, o.time
                    )));
                }
            }
        }
        Ok(Self {
            patients,
            protocol_horizon,
        })
    }

    pub fn empty(protocol_horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), protocol_horizon)
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn protocol_horizon(&self) -> f64 {
        self.protocol_horizon
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }

    /// Patients with the given outcome label, in their original order.
    pub fn select_group(&self, group: Group) -> Cohort {
        Cohort {
            patients: self
                .patients
                .iter()
                .filter(|p| p.group == group)
                .cloned()
                .collect(),
            protocol_horizon: self.protocol_horizon,
        }
    }

    /// Observations of `feature` per patient; patients lacking it map to 0.
    pub fn observation_counts(&self, feature: Feature) -> BTreeMap<String, usize> {
        self.patients
            .iter()
            .map(|p| (p.patient_id.clone(), p.observation_count(feature)))
            .collect()
    }

    pub fn without_patient(&self, patient_id: &str) -> Cohort {
        Cohort {
            patients: self
                .patients
                .iter()
                .filter(|p| p.patient_id != patient_id)
                .cloned()
                .collect(),
            protocol_horizon: self.protocol_horizon,
        }
    }

    pub fn with_patient(&self, patient: PatientRecord) -> Result<Cohort> {
        let mut patients = self.patients.clone();
        patients.push(patient);
        Cohort::new(patients, self.protocol_horizon)
    }

    /// Parses long-format CSV. Patients appear in order of first occurrence.
    pub fn from_csv_reader<R: Read>(reader: R, protocol_horizon: f64) -> Result<Cohort> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
        if header.iter().map(str::trim).ne(CSV_HEADER) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header '{}'", CSV_HEADER.join(",")),
            });
        }

        struct Pending {
            group: Group,
            obs: BTreeMap<Feature, Vec<Observation>>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut pending: BTreeMap<String, Pending> = BTreeMap::new();

        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(&e, 0))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let patient_id = field(0);
            if patient_id.is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: "empty patient_id".into(),
                });
            }
            let group: Group = field(1).parse().map_err(|e| at_line(e, line))?;
            let time = parse_number(field(2), "time_weeks", line)?;
            let feature: Feature = field(3).parse().map_err(|e| at_line(e, line))?;
            let value = parse_number(field(4), "value", line)?;
            let obs = Observation::new(time, value);
            obs.validate().map_err(|e| at_line(e, line))?;

            let entry = pending.entry(patient_id.to_string()).or_insert_with(|| {
                order.push(patient_id.to_string());
                Pending {
                    group,
                    obs: BTreeMap::new(),
                }
            });
            if entry.group != group {
                return Err(Error::Validation(format!(
                    "line {line}: patient '{patient_id}' labelled both {} and {group}",
                    entry.group
                )));
            }
            let list = entry.obs.entry(feature).or_default();
            if list.iter().any(|o| o.time == time) {
                return Err(Error::Validation(format!(
                    "line {line}: duplicate ({patient_id}, {feature}, t={time}) row"
                )));
            }
            list.push(obs);
        }

        let mut patients = Vec::with_capacity(order.len());
        for id in order {
            let p = pending.remove(&id).expect("recorded on first sight");
            let mut record = PatientRecord::new(id, p.group);
            for (feature, obs) in p.obs {
                record = record.with_series(FeatureSeries::new(feature, obs)?);
            }
            patients.push(record);
        }
        Cohort::new(patients, protocol_horizon)
    }

    pub fn from_csv_str(text: &str, protocol_horizon: f64) -> Result<Cohort> {
        Self::from_csv_reader(text.as_bytes(), protocol_horizon)
    }

    /// Writes one row per observation. Values use the shortest decimal
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        for p in &self.patients {
            for s in p.series.values() {
                for o in s.observations() {
                    out.write_record([
                        p.patient_id.as_str(),
                        p.group.as_str(),
                        &format!("{:?}", o.time),
                        s.feature().as_str(),
                        &format!("{:?}", o.value),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn save_cohort(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Loads a cohort CSV with the default 6-week protocol horizon.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    load_cohort_with_horizon(path, DEFAULT_PROTOCOL_HORIZON)
}

pub fn load_cohort_with_horizon(path: impl AsRef<Path>, protocol_horizon: f64) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    Cohort::from_csv_reader(std::io::BufReader::new(file), protocol_horizon)
}

fn parse_number(s: &str, column: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{column} '{s}' is not a decimal number"),
    })
}

fn at_line(e: Error, line: usize) -> Error {
    match e {
        Error::Validation(msg) => Error::Validation(format!("line {line}: {msg}")),
        other => other,
    }
}

fn csv_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}
