use std::path::Path;

use chrono::NaiveDate;
use freeway_dlm::ingest::{load_dataset_with_layout, LoadReport};
use freeway_dlm::{
    evaluate, generate_synthetic, grid_search, identity_transitions, interpolate_field, load_dataset, load_model,
    load_partial_day, mixing_transitions, period_masks_builtin, predict_steps, save_model, split_dataset, travel_time,
    write_dataset, write_layout, Config, DatasetSchema, Days, Field, FieldPredictor, Freeway, Hyperparams,
    InitialSpeeds, InstantaneousPredictor, KnnConfig, KnnPredictor, Layout, Matrix, MilepostOrder, Model,
    PostProcess, Route, SyntheticSpec, TimeGrid, TripPlan,
};
use freeway_dlm::{DlmPredictor, DistanceWindow};
use serde_json::{json, Value};

use crate::field_csv::{read_field, write_field};
use crate::{
    CliError, Cli, Command, DataArgs, Dynamics, EvaluateArgs, FreewayArg, GridArgs, GridSearchArgs, IngestArgs, Order,
    PostArgs, PredictArgs, PredictorArg, SweepArgs, SynthArgs, TrainArgs, TravelTimeArgs, UpdateArgs,
};

type Outcome = Result<Value, (CliError, Option<Value>)>;

fn fail<E: Into<CliError>>(e: E) -> (CliError, Option<Value>) {
    (e.into(), None)
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Ingest(a) => ingest(a).map_err(fail),
        Command::Synth(a) => synth(a).map_err(fail),
        Command::Train(a) => train(a).map_err(fail),
        Command::Update(a) => update(a).map_err(fail),
        Command::Predict(a) => predict(a).map_err(fail),
        Command::TravelTime(a) => travel(a).map_err(fail),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::GridSearch(a) => grid_search_cmd(a).map_err(fail),
    }
}

/// Pretty JSON, or `key: value` lines for the top-level fields.
pub fn emit(summary: &Value, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(summary).expect("json"));
        return;
    }
    if let Value::Object(map) = summary {
        for (k, v) in map {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                other => println!("{k}: {other}"),
            }
        }
    }
}

fn grid_of(g: &GridArgs) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::new(g.start_minute, g.step_minutes, g.num_steps)?)
}

fn schema(max_missing: f64, order: Order) -> DatasetSchema {
    DatasetSchema {
        max_missing_fraction: max_missing,
        milepost_order: match order {
            Order::Increasing => MilepostOrder::Increasing,
            Order::Decreasing => MilepostOrder::Decreasing,
        },
        ..Default::default()
    }
}

fn post_of(p: &PostArgs) -> Result<PostProcess, CliError> {
    Ok(PostProcess::new(p.post_a, p.post_b, p.post_lower, p.post_upper)?)
}

fn load(d: &DataArgs) -> Result<LoadReport<f64>, CliError> {
    Ok(load_dataset(&d.speeds, &d.layout, &schema(d.max_missing, d.milepost_order), grid_of(&d.grid)?)?)
}

fn load_like(path: &Path, layout: &Layout, grid: TimeGrid, max_missing: f64) -> Result<LoadReport<f64>, CliError> {
    let schema = schema(max_missing, Order::Increasing);
    Ok(load_dataset_with_layout(path, layout.clone(), &schema, grid)?)
}

fn require_days(set: &Days, what: &str) -> Result<(), CliError> {
    if set.is_empty() {
        return Err(CliError::Input(format!("{what} holds no usable days")));
    }
    Ok(())
}

fn rejected_json(report: &LoadReport<f64>) -> Value {
    json!(report
        .rejected
        .iter()
        .map(|r| json!({"day": r.day_id, "missing_fraction": r.missing_fraction, "reason": r.reason}))
        .collect::<Vec<_>>())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn ingest(a: &IngestArgs) -> Result<Value, CliError> {
    if a.split.as_ref().is_some_and(|f| f.len() != 3) {
        return Err(CliError::Input("--split takes three comma-separated fractions".into()));
    }
    let report = load(&a.data)?;
    create_dir(&a.out_dir)?;
    let set = &report.dayset;
    write_dataset(a.out_dir.join("speeds.csv"), set)?;
    write_layout(a.out_dir.join("layout.csv"), set.layout())?;
    let mut summary = json!({
        "days": set.len(),
        "sensors": set.layout().len(),
        "rejected_days": rejected_json(&report),
        "imputed_cells": report.imputed_cells,
        "out_dir": a.out_dir.display().to_string(),
    });
    if let Some(f) = &a.split {
        let (train, val, test) = split_dataset(set, (f[0], f[1], f[2]))?;
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            write_dataset(a.out_dir.join(format!("{name}.csv")), part)?;
        }
        summary["split"] = json!({"train": train.len(), "val": val.len(), "test": test.len()});
    }
    Ok(summary)
}

fn synth(a: &SynthArgs) -> Result<Value, CliError> {
    let grid = grid_of(&a.grid)?;
    let layout = Layout::uniform(a.sensors, a.length)?;
    let k = grid.last_index();
    let transitions = match a.dynamics {
        Dynamics::Identity => identity_transitions(a.sensors, k),
        Dynamics::Mixing => mixing_transitions(a.sensors, k, a.mixing, a.seed)?,
    };
    let start = NaiveDate::parse_from_str(&a.start_date, "%Y-%m-%d")
        .map_err(|_| CliError::Input(format!("bad --start-date `{}` (expected YYYY-MM-DD)", a.start_date)))?;
    let mut spec = SyntheticSpec::new(grid, layout, transitions);
    spec.num_days = a.days;
    spec.sigma = a.sigma;
    spec.seed = a.seed;
    spec.start_date = Some(start);
    spec.initial = match a.initial_constant {
        Some(v) => InitialSpeeds::Fixed(vec![v; a.sensors]),
        None => InitialSpeeds::Uniform {
            low: a.initial_low,
            high: a.initial_high,
        },
    };
    let (set, truth) = generate_synthetic(&spec)?;
    create_dir(&a.out_dir)?;
    write_dataset(a.out_dir.join("speeds.csv"), &set)?;
    write_layout(a.out_dir.join("layout.csv"), set.layout())?;
    let truth_path = a.out_dir.join("transitions.json");
    let body = serde_json::to_string(&truth).expect("json");
    std::fs::write(&truth_path, body).map_err(|e| CliError::Input(format!("{}: {e}", truth_path.display())))?;
    Ok(json!({
        "days": set.len(),
        "sensors": set.layout().len(),
        "grid_points": grid.num_steps(),
        "out_dir": a.out_dir.display().to_string(),
    }))
}

fn model_json(model: &Model, out: &Path) -> Value {
    json!({
        "days_seen": model.days_seen(),
        "sensors": model.num_sensors(),
        "transitions": model.num_transitions(),
        "regularization": model.hyper().regularization,
        "forgetting_factor": model.hyper().forgetting,
        "model": out.display().to_string(),
    })
}

fn train(a: &TrainArgs) -> Result<Value, CliError> {
    let report = load(&a.data)?;
    require_days(&report.dayset, "dataset")?;
    let hyper = Hyperparams::new(a.hyper.regularization, a.hyper.forgetting_factor)?;
    let model = Model::fit_batch(&report.dayset, hyper)?;
    save_model(&model, &a.out)?;
    let mut summary = model_json(&model, &a.out);
    summary["rejected_days"] = rejected_json(&report);
    Ok(summary)
}

fn update(a: &UpdateArgs) -> Result<Value, CliError> {
    let model: Model = load_model(&a.model)?;
    let report = load_like(&a.speeds, model.layout(), *model.grid(), a.max_missing)?;
    require_days(&report.dayset, "update file")?;
    let updated = model.update_with_days(report.dayset.days())?;
    save_model(&updated, &a.out)?;
    let mut summary = model_json(&updated, &a.out);
    summary["days_added"] = json!(report.dayset.len());
    Ok(summary)
}

fn observed_prefix(
    model: &Model,
    path: &Path,
    day: Option<&str>,
    now_index: usize,
) -> Result<(String, Matrix<f64>), CliError> {
    Ok(load_partial_day(path, model.layout(), &DatasetSchema::default(), model.grid(), now_index, day)?)
}

fn predict(a: &PredictArgs) -> Result<Value, CliError> {
    let model: Model = load_model(&a.model)?;
    let (day, observed) = observed_prefix(&model, &a.day_file, a.day.as_deref(), a.now_index)?;
    let last = model.grid().last_index();
    let steps = a.steps.unwrap_or(last.saturating_sub(a.now_index));
    let field = predict_steps(&model, &observed.column(a.now_index), a.now_index, steps, &post_of(&a.post)?)?;
    write_field(&a.out, model.layout(), a.now_index + 1, &field.values)?;
    Ok(json!({
        "day": day,
        "now_index": a.now_index,
        "steps": steps,
        "saturated_columns": field.saturated.iter().filter(|s| **s).count(),
        "out": a.out.display().to_string(),
    }))
}

fn travel(a: &TravelTimeArgs) -> Result<Value, CliError> {
    let field: Field = match (&a.field, &a.model) {
        (Some(path), None) => read_field(path, &grid_of(&a.grid)?)?,
        (None, Some(model_path)) => {
            let model: Model = load_model(model_path)?;
            let now = a.now_index.expect("clap requires --now-index");
            let day_file = a.day_file.as_ref().expect("clap requires --day-file");
            let (_, observed) = observed_prefix(&model, day_file, a.day.as_deref(), now)?;
            let last = model.grid().last_index();
            if now >= last {
                return Err(CliError::Input(format!("--now-index must be below the last grid index {last}")));
            }
            let v = observed.column(now);
            let predicted = predict_steps(&model, &v, now, last - now, &post_of(&a.post)?)?;
            let mut cols = vec![v];
            cols.extend((0..predicted.values.cols()).map(|j| predicted.values.column(j)));
            Field::on_grid(model.grid(), now, model.layout(), Matrix::from_columns(&cols)?)?
        }
        _ => return Err(CliError::Input("pass either --field or --model with --day-file and --now-index".into())),
    };
    let positions = field.positions();
    let origin = a.origin.unwrap_or(positions[0]);
    let destination = a.destination.unwrap_or(positions[positions.len() - 1]);
    let depart = a.depart_minute.unwrap_or(field.first_time());
    let minutes = travel_time(&interpolate_field(field), depart, origin, destination, a.delta_x)?;
    Ok(json!({
        "minutes": minutes,
        "depart_minute": depart,
        "origin": origin,
        "destination": destination,
        "delta_x": a.delta_x,
    }))
}

fn freeway_of(f: FreewayArg) -> Freeway {
    match f {
        FreewayArg::I5s => Freeway::I5S,
        FreewayArg::I210e => Freeway::I210E,
    }
}

fn eval_config(s: &SweepArgs, grid: &TimeGrid, horizons: Vec<u32>, freeway: Option<FreewayArg>) -> Result<Config, CliError> {
    if s.now_stride == 0 {
        return Err(CliError::Input("--now-stride must be at least 1".into()));
    }
    let masks = match freeway {
        Some(f) => {
            let (peak, off) = period_masks_builtin(freeway_of(f));
            vec![peak, off]
        }
        None => Vec::new(),
    };
    let routes = match (s.origin, s.destination) {
        (None, None) => Vec::new(),
        (o, d) => vec![Route {
            origin: o.ok_or_else(|| CliError::Input("--destination needs --origin".into()))?,
            destination: d.ok_or_else(|| CliError::Input("--origin needs --destination".into()))?,
        }],
    };
    Ok(Config {
        horizons,
        masks,
        plan: TripPlan {
            routes,
            now_indices: Some((0..grid.last_index()).step_by(s.now_stride).collect()),
        },
        delta_x: s.delta_x,
        baseline: Some("inst".into()),
    })
}

fn evaluate_cmd(a: &EvaluateArgs) -> Outcome {
    let model: Model = load_model(&a.model).map_err(fail)?;
    let grid = *model.grid();
    let test = load_like(&a.test_speeds, model.layout(), grid, a.max_missing).map_err(fail)?.dayset;
    require_days(&test, "test file").map_err(fail)?;
    let train = match &a.train_speeds {
        Some(p) => Some(load_like(p, model.layout(), grid, a.max_missing).map_err(fail)?.dayset),
        None => None,
    };
    let cfg = eval_config(&a.sweep, &grid, a.sweep.horizons.clone(), a.sweep.freeway).map_err(fail)?;
    let dlm = DlmPredictor::new(&model, post_of(&a.sweep.post).map_err(fail)?);
    let knn = match (&train, a.predictors.contains(&PredictorArg::Knn)) {
        (Some(t), true) => Some(KnnPredictor {
            train: t,
            cfg: KnnConfig {
                neighbors: a.knn_k,
                window: DistanceWindow::Full,
            },
        }),
        (None, true) => return Err(fail(CliError::Input("k-NN needs --train-speeds".into()))),
        _ => None,
    };
    let mut predictors: Vec<&dyn FieldPredictor<f64>> = Vec::new();
    for p in &a.predictors {
        match p {
            PredictorArg::Dlm => predictors.push(&dlm),
            PredictorArg::Inst => predictors.push(&InstantaneousPredictor),
            PredictorArg::Knn => predictors.push(knn.as_ref().expect("built above")),
        }
    }
    let report = evaluate(&predictors, &test, &cfg).map_err(fail)?;
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_json())
            .map_err(|e| fail(CliError::Input(format!("{}: {e}", path.display()))))?;
    }
    if let Some(path) = &a.records {
        report.write_records_csv(path).map_err(fail)?;
    }
    let summary = json!({
        "test_days": test.len(),
        "records": report.records.len(),
        "unevaluable": report.unevaluable,
        "truth_unavailable": report.truth_unavailable,
        "mape": report.aggregates.iter().map(|g| json!({
            "predictor": g.predictor, "horizon_minutes": g.horizon_minutes, "mask": g.mask,
            "count": g.count, "mape": g.mape,
        })).collect::<Vec<_>>(),
        "improvement": report.improvements.iter().map(|g| json!({
            "predictor": g.predictor, "horizon_minutes": g.horizon_minutes, "mask": g.mask, "rate": g.rate,
        })).collect::<Vec<_>>(),
    });
    if report.unevaluable > 0 {
        return Err((CliError::Unevaluable(report.unevaluable), Some(summary)));
    }
    Ok(summary)
}

fn grid_search_cmd(a: &GridSearchArgs) -> Result<Value, CliError> {
    let grid = grid_of(&a.grid)?;
    let schema = schema(a.max_missing, a.milepost_order);
    let train = load_dataset::<f64>(&a.train_speeds, &a.layout, &schema, grid)?.dayset;
    let val = load_dataset_with_layout(&a.val_speeds, train.layout().clone(), &schema, grid)?.dayset;
    require_days(&train, "training file")?;
    require_days(&val, "validation file")?;
    let sweep = SweepArgs {
        horizons: a.horizons.clone(),
        freeway: a.freeway,
        delta_x: a.delta_x,
        now_stride: a.now_stride,
        origin: None,
        destination: None,
        post: a.post,
    };
    let cfg = eval_config(&sweep, &grid, a.horizons.clone(), a.freeway)?;
    let select = a
        .select
        .clone()
        .unwrap_or_else(|| if a.freeway.is_some() { "peak".into() } else { "all".into() });
    let table = grid_search(&train, &val, &a.rhos, &a.lambdas, &cfg, &post_of(&a.post)?, Some(&select))?;
    table.write_csv(&a.out)?;
    Ok(json!({
        "rows": table.rhos.len(),
        "columns": table.lambdas.len(),
        "select": select,
        "best": table.best,
        "out": a.out.display().to_string(),
    }))
}
