use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mixtrack::cohort::{load_cohort_with_horizon, Cohort, Feature, Group, DEFAULT_PROTOCOL_HORIZON};
use mixtrack::evaluation::{compare_report, loocv, CvOptions, CvReport};
use mixtrack::features::{
    jacobian_stats, read_displacement_field, read_voxel_mask, tumor_volume, JacobianMode, JacobianStats,
};
use mixtrack::model::{fit_fixed, fit_mixed, Basis, EmOptions, FittedFixedModel, ModelSpec};
use mixtrack::predictor::{train, Forecast, PredictionMode, PredictionRequest, PredictorKind};
use mixtrack::simulator::{
    simulate_cohort, CohortSpec, Family, GrowthCurveParams, GrowthForm, GrowthTruth, MixedTruth,
};
use mixtrack::{Error, Result, SCHEMA_VERSION};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mixtrack", version, about = "Longitudinal tumor-feature modeling and forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CohortArgs {
    /// Cohort CSV (patient_id,group,time_weeks,feature,value)
    #[arg(long)]
    cohort: PathBuf,
    /// Protocol horizon in weeks
    #[arg(long, default_value_t = DEFAULT_PROTOCOL_HORIZON)]
    horizon: f64,
    #[arg(long, default_value = "volume", value_parser = parse::<Feature>)]
    feature: Feature,
    /// Time basis: linear or poly2
    #[arg(long, default_value = "poly2", value_parser = parse::<Basis>)]
    basis: Basis,
}

#[derive(clap::Args)]
struct EmArgs {
    /// EM iteration budget
    #[arg(long, default_value_t = EmOptions::default().max_iter)]
    max_iter: usize,
    /// EM stops when the log-likelihood changes by less than this, relative
    #[arg(long, default_value_t = EmOptions::default().rel_tol)]
    rel_tol: f64,
}

impl EmArgs {
    fn options(&self) -> EmOptions {
        EmOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    MixedLinear,
    MixedPoly2,
    GrowthCurve,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Mixed,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and its ground truth
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory, or a .csv path (truth.json is written beside it)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 19)]
        n_per_group: usize,
        #[arg(long, value_enum, default_value = "mixed-poly2")]
        family: FamilyArg,
        /// Growth family only: algebraic or differential form
        #[arg(long, default_value = "algebraic", value_parser = parse_growth_form)]
        growth_form: GrowthForm,
        /// Growth family only: use y0·e^(−d·t) + g·t
        #[arg(long)]
        multiplicative_decay: bool,
        #[arg(long, default_value = "volume", value_parser = parse::<Feature>)]
        feature: Feature,
        /// Full CohortSpec as JSON; replaces the family flags
        #[arg(long, conflicts_with_all = ["family", "n_per_group", "multiplicative_decay"])]
        spec: Option<PathBuf>,
    },
    /// Volume and Jacobian statistics from a displacement field and mask
    Extract {
        /// DFLD displacement field
        #[arg(long)]
        field: PathBuf,
        /// MSK1 voxel mask
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "determinant", value_parser = parse_jacobian_mode)]
        mode: JacobianMode,
        /// Output file or directory; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a mixed or pooled fixed-effect model
    Fit {
        #[command(flatten)]
        data: CohortArgs,
        /// Restrict to one group; all patients if omitted
        #[arg(long, value_parser = parse::<Group>)]
        group: Option<Group>,
        #[arg(long, value_enum, default_value = "mixed")]
        kind: FitKind,
        #[command(flatten)]
        em: EmArgs,
        /// Output file or directory; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for curve.csv and trajectories.csv
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Forecast a new patient's feature values
    Predict {
        #[command(flatten)]
        data: CohortArgs,
        /// Group the new patient belongs to; taken from the history file if omitted
        #[arg(long, value_parser = parse::<Group>)]
        group: Option<Group>,
        #[arg(long, default_value = "mixed", value_parser = parse::<PredictorKind>)]
        kind: PredictorKind,
        /// The new patient's observations, cohort CSV layout, one patient
        #[arg(long)]
        history: Option<PathBuf>,
        /// Comma-separated target times in weeks
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, default_value = "refit_g", value_parser = parse::<PredictionMode>)]
        mode: PredictionMode,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-out cross-validation of predictor kinds on one group
    Cv {
        #[command(flatten)]
        data: CohortArgs,
        #[arg(long, value_parser = parse::<Group>)]
        group: Group,
        /// Comma-separated predictor kinds
        #[arg(long, value_delimiter = ',', default_value = "mixed,in_class_fixed,out_class_fixed", value_parser = parse::<PredictorKind>)]
        kinds: Vec<PredictorKind>,
        #[arg(long, default_value = "refit_g", value_parser = parse::<PredictionMode>)]
        mode: PredictionMode,
        /// Observations used as history; all but the last if omitted
        #[arg(long)]
        history_len: Option<usize>,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for residuals.csv and residual_histogram.csv
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Tabulate several CV reports side by side
    Compare {
        /// CV report JSON files
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_growth_form(s: &str) -> std::result::Result<GrowthForm, String> {
    match s {
        "algebraic" => Ok(GrowthForm::Algebraic),
        "differential" | "ode" => Ok(GrowthForm::Differential),
        _ => Err(format!("unknown growth form '{s}'")),
    }
}

fn parse_jacobian_mode(s: &str) -> std::result::Result<JacobianMode, String> {
    match s {
        "determinant" => Ok(JacobianMode::Determinant),
        "gradient_entries" => Ok(JacobianMode::GradientEntries),
        _ => Err(format!("unknown jacobian mode '{s}'")),
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

#[derive(Serialize)]
struct SimulateReport {
    schema_version: u32,
    cohort: PathBuf,
    truth: PathBuf,
    n_patients: usize,
    seed: u64,
}

#[derive(Serialize)]
struct ExtractReport {
    schema_version: u32,
    mode: JacobianMode,
    voxel_count: usize,
    tumor_volume: f64,
    mask_touches_boundary: bool,
    jacobian: JacobianStats,
}

#[derive(Serialize)]
struct FixedReport<'a> {
    schema_version: u32,
    #[serde(flatten)]
    model: &'a FittedFixedModel,
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `--out` naming a `.json`/`.csv` file is used as is; anything else is a
/// directory that receives `default_name`. `None` means stdout.
fn emit(out: Option<&Path>, default_name: &str, text: &str) -> Result<()> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(p) => {
            let path = resolve(p, default_name)?;
            fs::write(path, text)?;
            Ok(())
        }
    }
}

fn resolve(p: &Path, default_name: &str) -> Result<PathBuf> {
    let is_file = matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "csv"));
    if is_file {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(p.to_path_buf())
    } else {
        fs::create_dir_all(p)?;
        Ok(p.join(default_name))
    }
}

fn growth_truth(g: f64) -> GrowthTruth {
    GrowthTruth {
        params: GrowthCurveParams { y0: 30.0, d: 0.8, g },
        spread: GrowthCurveParams { y0: 3.0, d: 0.2, g: 0.5 },
        y_init: 30.0,
        sigma2: 1.0,
    }
}

fn simulate_spec(family: FamilyArg, form: GrowthForm, multiplicative: bool) -> CohortSpec {
    let default = CohortSpec::default();
    let family = match family {
        FamilyArg::MixedPoly2 => default.family.clone(),
        FamilyArg::MixedLinear => Family::MixedLinear {
            survived: MixedTruth::new(vec![40.0, -15.0], &[25.0, 36.0], 4.0),
            deceased: MixedTruth::new(vec![45.0, 5.0], &[25.0, 36.0], 4.0),
        },
        FamilyArg::GrowthCurve => Family::GrowthCurve {
            form,
            multiplicative_decay: multiplicative,
            survived: growth_truth(0.5),
            deceased: growth_truth(3.0),
        },
    };
    CohortSpec { family, ..default }
}

fn load(data: &CohortArgs) -> Result<(Cohort, ModelSpec)> {
    let cohort = load_cohort_with_horizon(&data.cohort, data.horizon)?;
    let spec = ModelSpec::new(data.basis).with_time_scale(data.horizon);
    Ok((cohort, spec))
}

fn write_fit_plots(dir: &Path, cohort: &Cohort, feature: Feature, curve: &dyn Fn(Option<&str>, f64) -> f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let horizon = cohort.protocol_horizon();
    let mut c = String::from("time_weeks,fitted\n");
    for k in 0..=60 {
        let t = horizon * k as f64 / 60.0;
        c.push_str(&format!("{t:?},{:?}\n", curve(None, t)));
    }
    fs::write(dir.join("curve.csv"), c)?;

    let mut tr = String::from("patient_id,group,time_weeks,observed,fitted\n");
    for p in cohort.patients() {
        if let Some(s) = p.series(feature) {
            for o in s.observations() {
                tr.push_str(&format!(
                    "{},{},{:?},{:?},{:?}\n",
                    p.patient_id,
                    p.group,
                    o.time,
                    o.value,
                    curve(Some(&p.patient_id), o.time)
                ));
            }
        }
    }
    fs::write(dir.join("trajectories.csv"), tr)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            seed,
            out,
            n_per_group,
            family,
            growth_form,
            multiplicative_decay,
            feature,
            spec,
        } => {
            let spec = match spec {
                Some(path) => serde_json::from_str::<CohortSpec>(&fs::read_to_string(path)?)?.with_seed(seed),
                None => CohortSpec {
                    feature,
                    ..simulate_spec(family, growth_form, multiplicative_decay)
                }
                .with_n_per_group(n_per_group)
                .with_seed(seed),
            };
            let (cohort, truth) = simulate_cohort(&spec)?;
            let cohort_path = resolve(&out, "cohort.csv")?;
            let truth_path = cohort_path.with_file_name("truth.json");
            cohort.save_cohort(&cohort_path)?;
            fs::write(&truth_path, json(&truth)?)?;
            print!(
                "{}",
                json(&SimulateReport {
                    schema_version: SCHEMA_VERSION,
                    cohort: cohort_path,
                    truth: truth_path,
                    n_patients: cohort.len(),
                    seed,
                })?
            );
        }
        Command::Extract { field, mask, mode, out } => {
            let field = read_displacement_field(field)?;
            let mask = read_voxel_mask(mask)?;
            let stats = jacobian_stats(&field, &mask, mode)?;
            let touches = mask.touches_boundary();
            if touches {
                eprintln!("warning: mask touches the grid boundary; one-sided differences are used there");
            }
            let report = ExtractReport {
                schema_version: SCHEMA_VERSION,
                mode,
                voxel_count: mask.count(),
                tumor_volume: tumor_volume(&mask),
                mask_touches_boundary: touches,
                jacobian: stats,
            };
            emit(out.as_deref(), "features.json", &json(&report)?)?;
        }
        Command::Fit {
            data,
            group,
            kind,
            em,
            out,
            plot_data,
        } => {
            let (cohort, spec) = load(&data)?;
            let cohort = match group {
                Some(g) => cohort.select_group(g),
                None => cohort,
            };
            match kind {
                FitKind::Mixed => {
                    let model = fit_mixed(&cohort, data.feature, &spec, &em.options())?;
                    if let Some(dir) = &plot_data {
                        let curve = |id: Option<&str>, t: f64| {
                            model.predict(id.and_then(|id| model.blups.get(id)).map(|b| b.as_slice()), t)
                        };
                        write_fit_plots(dir, &cohort, data.feature, &curve)?;
                    }
                    emit(out.as_deref(), "model.json", &(model.to_json()? + "\n"))?;
                }
                FitKind::Fixed => {
                    let model = fit_fixed(&cohort, data.feature, &spec)?;
                    if let Some(dir) = &plot_data {
                        write_fit_plots(dir, &cohort, data.feature, &|_, t| model.predict(t))?;
                    }
                    let report = FixedReport {
                        schema_version: SCHEMA_VERSION,
                        model: &model,
                    };
                    emit(out.as_deref(), "model.json", &json(&report)?)?;
                }
            }
        }
        Command::Predict {
            data,
            group,
            kind,
            history,
            times,
            mode,
            em,
            out,
        } => {
            let (cohort, spec) = load(&data)?;
            let history = match history {
                Some(path) => {
                    let h = load_cohort_with_horizon(path, data.horizon)?;
                    let [patient] = h.patients() else {
                        return Err(Error::Validation(format!(
                            "history file must hold exactly one patient, found {}",
                            h.len()
                        )));
                    };
                    let series = patient.series(data.feature).cloned().ok_or(Error::EmptyHistory)?;
                    Some((patient.group, series))
                }
                None => None,
            };
            let group = group
                .or(history.as_ref().map(|h| h.0))
                .ok_or_else(|| Error::Validation("--group is required without --history".into()))?;
            let predictor = train(&cohort, data.feature, &spec, kind, group, &em.options())?;
            let forecast: Forecast = predictor.forecast(&PredictionRequest {
                history: history.map(|h| h.1),
                target_times: times,
                group,
                mode,
            })?;
            emit(out.as_deref(), "forecast.json", &json(&forecast)?)?;
        }
        Command::Cv {
            data,
            group,
            kinds,
            mode,
            history_len,
            em,
            out,
            plot_data,
        } => {
            let (cohort, spec) = load(&data)?;
            let opts = CvOptions {
                mode,
                history_len,
                em: em.options(),
            };
            let report = loocv(&cohort, data.feature, &spec, &kinds, group, &opts)?;
            if let Some(dir) = &plot_data {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("residuals.csv"), report.residuals_csv())?;
                fs::write(dir.join("residual_histogram.csv"), report.residual_histogram_csv(20))?;
            }
            emit(out.as_deref(), "cv_report.json", &(report.to_json()? + "\n"))?;
        }
        Command::Compare { reports, out } => {
            let reports = reports
                .iter()
                .map(|p| CvReport::from_json(&fs::read_to_string(p)?))
                .collect::<Result<Vec<_>>>()?;
            let table = compare_report(&reports)?;
            emit(out.as_deref(), "comparison.json", &json(&table)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(1)
        }
    }
}
