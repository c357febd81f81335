use std::collections::BTreeSet;

use mixtrack::cohort::{load_cohort, Cohort, Feature, FeatureSeries, Group, PatientRecord};
use mixtrack::simulator::{simulate_cohort, CohortSpec};
use mixtrack::Error;
use proptest::prelude::*;

fn arb_series(feature: Feature) -> impl Strategy<Value = FeatureSeries> {
    prop::collection::btree_map(0u32..900, any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..8)
        .prop_map(move |m| {
            let times: Vec<f64> = m.keys().map(|&t| t as f64 / 100.0).collect();
            let values: Vec<f64> = m.values().copied().collect();
            FeatureSeries::from_pairs(feature, &times, &values).unwrap()
        })
}

fn arb_patient(i: usize) -> impl Strategy<Value = PatientRecord> {
    (
        prop::bool::ANY,
        prop::collection::vec(prop::bool::ANY, Feature::ALL.len()),
        prop::collection::vec(arb_series(Feature::Volume), Feature::ALL.len()),
    )
        .prop_map(move |(deceased, present, series)| {
            let group = if deceased { Group::Deceased } else { Group::Survived };
            let mut p = PatientRecord::new(format!("pt,{i}\"x"), group);
            for (k, f) in Feature::ALL.iter().enumerate() {
                if present[k] || k == 0 {
                    let s = &series[k];
                    let times: Vec<f64> = s.times().collect();
                    let values: Vec<f64> = s.values().collect();
                    p = p.with_series(FeatureSeries::from_pairs(*f, &times, &values).unwrap());
                }
            }
            p
        })
}

fn arb_cohort() -> impl Strategy<Value = Cohort> {
    (1usize..6)
        .prop_flat_map(|n| (0..n).map(arb_patient).collect::<Vec<_>>())
        .prop_map(|ps| Cohort::new(ps, 6.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_roundtrip_is_bit_exact(c in arb_cohort()) {
        let text = c.to_csv_string();
        let back = Cohort::from_csv_str(&text, 6.0).unwrap();
        prop_assert_eq!(&back, &c);
        for (a, b) in c.patients().iter().zip(back.patients()) {
            for f in Feature::ALL {
                if let (Some(x), Some(y)) = (a.series(f), b.series(f)) {
                    for (o, p) in x.observations().iter().zip(y.observations()) {
                        prop_assert_eq!(o.value.to_bits(), p.value.to_bits());
                        prop_assert_eq!(o.time.to_bits(), p.time.to_bits());
                    }
                }
            }
        }
        prop_assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn groups_partition_the_cohort(c in arb_cohort()) {
        let s = c.select_group(Group::Survived);
        let d = c.select_group(Group::Deceased);
        prop_assert_eq!(s.len() + d.len(), c.len());
        let ids: BTreeSet<_> = s.patients().iter().chain(d.patients()).map(|p| p.patient_id.clone()).collect();
        let all: BTreeSet<_> = c.patients().iter().map(|p| p.patient_id.clone()).collect();
        prop_assert_eq!(ids, all);
        prop_assert!(s.patients().iter().all(|p| p.group == Group::Survived));
        prop_assert!(d.patients().iter().all(|p| p.group == Group::Deceased));
    }
}

#[test]
fn simulated_cohort_survives_a_file_roundtrip() {
    let (c, _) = simulate_cohort(&CohortSpec::default()).unwrap();
    assert_eq!(c.len(), 38);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.csv");
    c.save_cohort(&path).unwrap();
    let back = load_cohort(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), c.to_csv_string());
}

#[test]
fn observation_counts_cover_every_patient() {
    let (c, _) = simulate_cohort(&CohortSpec::default().with_seed(4)).unwrap();
    let counts = c.observation_counts(Feature::Volume);
    assert_eq!(counts.len(), 38);
    assert!(counts.values().all(|&n| (3..=7).contains(&n)));
    assert_eq!(counts.values().sum::<usize>(), c.to_csv_string().lines().count() - 1);
}

#[test]
fn malformed_csv_is_classified() {
    let head = "patient_id,group,time_weeks,feature,value\n";
    let cases = [
        ("p1,survived,abc,volume,1.0\n", "ParseError"),
        ("p1,survived,1,volume,x\n", "ParseError"),
        ("p1,alive,1,volume,1\n", "ValidationError"),
        ("p1,survived,1,color,1\n", "ValidationError"),
        ("p1,survived,1,volume,1\np1,survived,1,volume,2\n", "ValidationError"),
        ("p1,survived,1,volume,1\np1,deceased,2,volume,2\n", "ValidationError"),
        ("p1,survived,-1,volume,1\n", "ValidationError"),
        ("p1,survived,20,volume,1\n", "ValidationError"),
    ];
    for (body, kind) in cases {
        let err = Cohort::from_csv_str(&format!("{head}{body}"), 6.0).unwrap_err();
        assert_eq!(err.kind(), kind, "{body:?}: {err}");
    }
    let err = Cohort::from_csv_str("id,group,t,feature,value\n", 6.0).unwrap_err();
    assert!(matches!(err, Error::Parse { .. } | Error::Validation(_)));
}
