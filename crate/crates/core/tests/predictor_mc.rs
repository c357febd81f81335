use mixtrack::cohort::{Cohort, Feature, FeatureSeries, Group};
use mixtrack::model::{fit_fixed, Basis, EmOptions, ModelSpec};
use mixtrack::predictor::{train, PredictionMode, PredictionRequest, PredictorKind, TrainedPredictor};
use mixtrack::simulator::{simulate_cohort, CohortSpec, GroundTruth, MixedTruth};

const F: Feature = Feature::Volume;
const NEWCOMERS: usize = 5;

fn truth() -> MixedTruth {
    MixedTruth::new(vec![10.0, -1.0], &[4.0, 4.0], 0.5)
}

/// Training group of 19 plus fully observed newcomers from the same law.
fn trial(seed: u64) -> (Cohort, Cohort, GroundTruth, ModelSpec) {
    let base = CohortSpec::mixed_linear(truth());
    let spec = base.model_spec(Basis::Linear);
    let (train_cohort, _) = simulate_cohort(&base.clone().with_seed(seed)).unwrap();
    let (new, gt) = simulate_cohort(
        &base
            .with_seed(seed.wrapping_add(1 << 32))
            .with_n_per_group(NEWCOMERS)
            .without_missingness(),
    )
    .unwrap();
    (train_cohort, new.select_group(Group::Survived), gt, spec)
}

fn forecast_at(p: &TrainedPredictor, history: &FeatureSeries, mode: PredictionMode, t: f64) -> f64 {
    let req = PredictionRequest {
        history: Some(history.clone()),
        target_times: vec![t],
        group: Group::Survived,
        mode,
    };
    p.forecast(&req).unwrap().predictions[0].value
}

#[test]
fn refit_mixed_beats_in_class_fixed_at_final_week() {
    let opts = EmOptions::default();
    let mut wins = 0;
    for seed in 0..100 {
        let (c, newcomers, _, spec) = trial(seed);
        let mixed = train(&c, F, &spec, PredictorKind::Mixed, Group::Survived, &opts).unwrap();
        let fixed = train(&c, F, &spec, PredictorKind::InClassFixed, Group::Survived, &opts).unwrap();
        let (mut err_m, mut err_f) = (0.0, 0.0);
        for p in newcomers.patients() {
            let s = p.series(F).unwrap();
            let last = s.observations().last().unwrap();
            let history = s.prefix(s.len() - 1).unwrap();
            err_m += (forecast_at(&mixed, &history, PredictionMode::RefitG, last.time) - last.value).abs();
            err_f += (forecast_at(&fixed, &history, PredictionMode::RefitG, last.time) - last.value).abs();
        }
        wins += (err_m <= err_f) as usize;
    }
    assert!(wins >= 90, "refit_g won {wins}/100 trials");
}

#[test]
fn frozen_error_shrinks_as_history_grows() {
    let opts = EmOptions::default();
    let mut mae = [0.0; 4];
    for seed in 0..100 {
        let (c, newcomers, gt, spec) = trial(1000 + seed);
        let mixed = train(&c, F, &spec, PredictorKind::Mixed, Group::Survived, &opts).unwrap();
        for p in newcomers.patients() {
            let s = p.series(F).unwrap();
            let t_end = s.observations().last().unwrap().time;
            let target = gt.patient(&p.patient_id).unwrap().trajectory(&gt.spec, t_end);
            for (k, len) in (2..=5).enumerate() {
                let history = s.prefix(len).unwrap();
                mae[k] += (forecast_at(&mixed, &history, PredictionMode::FrozenG, t_end) - target).abs();
            }
        }
    }
    for w in mae.windows(2) {
        assert!(w[1] <= w[0], "MAE by history length 2..=5: {mae:?}");
    }
}

#[test]
fn fixed_kinds_route_to_the_right_group() {
    let (c, _) = simulate_cohort(&CohortSpec::default().with_seed(5)).unwrap();
    let spec = ModelSpec::new(Basis::Polynomial2);
    let opts = EmOptions::default();
    for g in Group::ALL {
        let in_class = train(&c, F, &spec, PredictorKind::InClassFixed, g, &opts).unwrap();
        let out_class = train(&c, F, &spec, PredictorKind::OutClassFixed, g.other(), &opts).unwrap();
        let direct = fit_fixed(&c.select_group(g), F, &spec).unwrap();
        assert_eq!(in_class.fixed_model().unwrap().beta, direct.beta);
        assert_eq!(out_class.fixed_model().unwrap().beta, direct.beta);
    }
}

#[test]
fn frozen_forecasts_are_deterministic() {
    let (c, newcomers, _, spec) = trial(77);
    let mixed = train(&c, F, &spec, PredictorKind::Mixed, Group::Survived, &EmOptions::default()).unwrap();
    let h = newcomers.patients()[0].series(F).unwrap().prefix(3).unwrap();
    let req = PredictionRequest {
        history: Some(h),
        target_times: vec![3.0, 4.5, 6.0],
        group: Group::Survived,
        mode: PredictionMode::FrozenG,
    };
    let a = serde_json::to_string(&mixed.forecast(&req).unwrap()).unwrap();
    let b = serde_json::to_string(&mixed.forecast(&req).unwrap()).unwrap();
    assert_eq!(a, b);
}
