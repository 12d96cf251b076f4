use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use ventus_core::container::ModelContainer;
use ventus_core::data::{Technology, TimeSeriesPanel};
use ventus_core::decomposition::{eemd, EemdConfig};
use ventus_core::econometrics::{
    classify_plants, fit_fixed_effects, RegressionSpec, DEMAND, SOLAR, WIND,
};
use ventus_core::gridcaster::{
    apply_bias_correction, fit_bias_correction, hindcast, per_key_mse, rollout_train, BiasModel,
    BoundingBox, GridForecaster, GridModelConfig, LossConfig,
};
use ventus_core::hybrid_eval::{emit_report, parse_window, skill_report, ForecastBundle};
use ventus_core::ingestion::{
    generate_synthetic, load_generation_csv, load_grid_tensor, load_locations_csv,
    load_station_csv, write_generation_csv, write_grid_tensor, write_locations_csv,
    write_station_csv, SyntheticScenario,
};
use ventus_core::{Error, Result};

use crate::pipeline::{
    predict_hybrid, split_index, station_task, HybridInputs, HybridRunConfig, TideSet,
    TideTrainConfig,
};
use crate::{artifact, Cli, Command, BIAS_FILE, GRID_FILE, RUN_FILE, TIDE_FILE};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let resolved = match &cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Decompose(a) => decompose(a)?,
        Command::AnalyzeMarginal(a) => analyze_marginal(a)?,
        Command::TrainTide(a) => train_tide(a)?,
        Command::PredictTide(a) => predict_tide(a)?,
        Command::TrainGrid(a) => train_grid(a)?,
        Command::FinetuneGrid(a) => finetune_grid(a)?,
        Command::BiasCorrect(a) => bias_correct(a)?,
        Command::PredictHybrid(a) => hybrid(a)?,
        Command::Evaluate(a) => evaluate(a)?,
    };
    let record = json!({
        "tool": "ventus",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "jobs": cli.jobs,
        "args": serde_json::to_value(&cli.command).map_err(internal)?,
        "resolved": resolved,
    });
    let out = out_dir(&cli.command);
    let text = serde_json::to_string_pretty(&record).map_err(internal)? + "\n";
    write(&out.join(RUN_FILE), text)
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Ingest(a) => &a.out,
        Command::Synth(a) => &a.out,
        Command::Decompose(a) => &a.out,
        Command::AnalyzeMarginal(a) => &a.out,
        Command::TrainTide(a) => &a.out,
        Command::PredictTide(a) => &a.out,
        Command::TrainGrid(a) => &a.out,
        Command::FinetuneGrid(a) => &a.out,
        Command::BiasCorrect(a) => &a.out,
        Command::PredictHybrid(a) => &a.out,
        Command::Evaluate(a) => &a.out,
    }
}

fn internal(e: impl std::fmt::Display) -> Error {
    Error::io("run.json", std::io::Error::other(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("plain data serializes")
}

fn input(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::invalid(format!(
            "input `{}` does not exist",
            path.display()
        )))
    }
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(input(p)?).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn read_model(path: &Path, default_name: &str) -> Result<ModelContainer> {
    ModelContainer::read(input(&artifact(input(path)?, default_name))?)
}

/// The file itself, or `name` inside the directory.
fn data_file(path: &Path, name: &str) -> Result<PathBuf> {
    let p = artifact(input(path)?, name);
    input(&p)?;
    Ok(p)
}

fn ingest(a: &crate::IngestArgs) -> Result<Value> {
    if a.generation.is_none() && a.grid.is_none() {
        return Err(Error::invalid("ingest needs --generation and/or --grid"));
    }
    create(&a.out)?;
    let mut summary = serde_json::Map::new();
    if let Some(g) = &a.generation {
        let panel = load_generation_csv(input(g)?)?;
        write_generation_csv(&panel, &a.out.join("generation.csv"))?;
        let counts: serde_json::Map<String, Value> = Technology::ALL
            .iter()
            .map(|&t| (t.as_str().to_string(), json!(panel.plants(t).len())))
            .collect();
        summary.insert(
            "generation".into(),
            json!({"hours": panel.len(), "start": panel.start().to_rfc3339(), "plants": counts}),
        );
    }
    if let Some(g) = &a.grid {
        let seq = load_grid_tensor(input(g)?)?;
        write_grid_tensor(&seq, &a.out.join("grid.gt1"))?;
        let s = seq.spec();
        summary.insert(
            "grid".into(),
            json!({
                "n_times": seq.n_times(),
                "n_lat": s.n_lat,
                "n_lon": s.n_lon,
                "variables": s.variables,
                "dt_seconds": s.dt,
                "variable_means": crate::pipeline::variable_means(&seq),
            }),
        );
    }
    if let Some(l) = &a.locations {
        let locs = load_locations_csv(input(l)?)?;
        write_locations_csv(&locs, &a.out.join("locations.csv"))?;
        summary.insert("locations".into(), json!(locs.len()));
    }
    let summary = Value::Object(summary);
    write(
        &a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(internal)? + "\n",
    )?;
    Ok(summary)
}

fn synth(a: &crate::SynthArgs) -> Result<Value> {
    let mut scenario: SyntheticScenario = load_toml(a.config.as_ref())?;
    scenario.seed = a.seed;
    scenario.hours = a.hours;
    let out = generate_synthetic(&scenario)?;
    create(&a.out)?;
    write_generation_csv(&out.panel, &a.out.join("generation.csv"))?;
    write_grid_tensor(&out.grid, &a.out.join("grid.gt1"))?;
    write_locations_csv(&out.locations, &a.out.join("locations.csv"))?;
    write_station_csv(&out.stations, &a.out.join("stations.csv"))?;
    let mut labels = String::from("plant_id,label\n");
    for (id, label) in &out.planted_labels {
        labels.push_str(&format!("{id},{label}\n"));
    }
    write(&a.out.join("planted_labels.csv"), labels)?;
    Ok(json!({ "scenario": to_json(&scenario) }))
}

fn read_column(a: &crate::DecomposeArgs) -> Result<(String, Vec<f64>)> {
    let path = input(&a.series)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.clone(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = match &a.column {
        Some(c) => header
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| parse_err(1, format!("no column `{c}`")))?,
        None => header.len() - 1,
    };
    let filter = match &a.filter {
        Some(f) => {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--where `{f}` must look like key=value")))?;
            let idx = header
                .iter()
                .position(|h| *h == k.trim())
                .ok_or_else(|| parse_err(1, format!("no column `{}`", k.trim())))?;
            Some((idx, v.trim().to_string()))
        }
        None => None,
    };
    let mut values = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields", header.len()),
            ));
        }
        if let Some((k, v)) = &filter {
            if fields[*k] != v {
                continue;
            }
        }
        let x: f64 = fields[col]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad number `{}`", fields[col])))?;
        values.push(x);
    }
    Ok((header[col].to_string(), values))
}

fn decompose(a: &crate::DecomposeArgs) -> Result<Value> {
    let (name, x) = read_column(a)?;
    let config = EemdConfig {
        ensemble_size: a.ensemble,
        noise_amplitude: a.noise,
        seed: a.seed,
        max_imfs: a.max_imfs,
        ..EemdConfig::default()
    };
    let d = eemd(&x, &config)?;
    create(&a.out)?;
    let mut out: Vec<String> = (1..=d.imfs.len()).map(|k| format!("imf{k}")).collect();
    out.push("residue".into());
    let mut text = out.join(",") + "\n";
    for t in 0..x.len() {
        let row: Vec<String> = d.components().map(|c| format!("{}", c[t])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write(&a.out.join("imfs.csv"), text)?;
    Ok(json!({"column": name, "length": x.len(), "n_imfs": d.imfs.len(), "eemd": to_json(&config)}))
}

fn load_panel(path: &Path) -> Result<TimeSeriesPanel> {
    load_generation_csv(&data_file(path, "generation.csv")?)
}

fn analyze_marginal(a: &crate::AnalyzeArgs) -> Result<Value> {
    let spec: RegressionSpec = load_toml(a.config.as_ref())?;
    let panel = load_panel(&a.panel)?;
    let mut text = String::from("target,coefficient,std_error,t_stat,label\n");
    if a.per_plant {
        let plants: Vec<String> = panel
            .plants(Technology::Thermal)
            .into_iter()
            .map(String::from)
            .collect();
        for c in classify_plants(&panel, &plants, &spec)? {
            text.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{}\n",
                c.plant_id, c.coefficient, c.standard_error, c.t_stat, c.label
            ));
        }
    } else {
        let fit = fit_fixed_effects(&panel, &spec)?;
        for (k, name) in fit.names.iter().enumerate() {
            text.push_str(&format!(
                "aggregate_thermal,{:.16e},{:.16e},{:.16e},{name}\n",
                fit.coefficients[k], fit.standard_errors[k], fit.t_stats[k]
            ));
        }
        log::info!(
            "solar {:?}, wind {:?}, demand {:?}, R^2 {:.4}, n = {}",
            fit.coefficient(SOLAR),
            fit.coefficient(WIND),
            fit.coefficient(DEMAND),
            fit.r_squared,
            fit.n_obs
        );
    }
    create(&a.out)?;
    write(&a.out.join("report.csv"), text)?;
    Ok(json!({"regression": to_json(&spec)}))
}

fn stations(dir: &Path) -> Result<ventus_core::ingestion::StationTable> {
    load_station_csv(&data_file(dir, "stations.csv")?)
}

fn train_tide(a: &crate::TrainTideArgs) -> Result<Value> {
    let mut config: TideTrainConfig = load_toml(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        config.ensemble.tide.seed = seed;
        config.ensemble.eemd.seed = seed;
    }
    let table = stations(&a.data)?;
    let set = TideSet::train(&table, &config)?;
    create(&a.out)?;
    set.to_container().write(&a.out.join(TIDE_FILE))?;
    Ok(json!({"config": to_json(&config), "locations": set.models.keys().collect::<Vec<_>>()}))
}

fn predict_tide(a: &crate::PredictTideArgs) -> Result<Value> {
    let set = TideSet::from_container(&read_model(&a.model, TIDE_FILE)?)?;
    let table = stations(&a.data)?;
    let name = match &a.location {
        Some(n) => n.clone(),
        None => set
            .models
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| Error::invalid("model set is empty"))?,
    };
    let model = set.get(&name)?;
    let latest = table
        .len()
        .checked_sub(1 + a.horizon + model.horizon())
        .ok_or_else(|| Error::invalid("station data too short for this horizon"))?;
    let issue = a.issue.unwrap_or(latest);
    let task = station_task(&table, &name, model, issue, a.horizon)?;
    let mut model = model.clone();
    model.config.n_chains = a.chains;
    let f = model.predict(&task, a.horizon, a.seed)?;
    let issue_time = table.start + chrono::Duration::hours(issue as i64);
    let mut text = String::from("location,issue_time,lead_hours,forecast\n");
    for (k, v) in f.total.iter().enumerate() {
        text.push_str(&format!(
            "{name},{},{},{v:.16e}\n",
            issue_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            k + 1
        ));
    }
    create(&a.out)?;
    write(&a.out.join("forecast.csv"), text)?;
    Ok(json!({"location": name, "issue_hour": issue, "chains": a.chains}))
}

fn train_slice(path: &Path, fraction: f64) -> Result<ventus_core::data::GridStateSequence> {
    let seq = load_grid_tensor(&data_file(path, "grid.gt1")?)?;
    let end = split_index(seq.n_times(), fraction)?;
    seq.slice_time(0, end)
}

fn train_grid(a: &crate::TrainGridArgs) -> Result<Value> {
    let train = train_slice(&a.data, a.train_fraction)?;
    let loss: LossConfig = load_toml(a.loss.as_ref())?;
    let loss = loss.resolve(&train)?;
    let mut config: GridModelConfig = load_toml(a.config.as_ref())?;
    config.seed = a.seed;
    let model = GridForecaster::new(config.clone(), &train)?;
    let (trained, report) = rollout_train(&model, &train, &loss, a.steps, a.seed)?;
    let (head, tail) = report.moving_average_ends(10.min(a.steps.max(1)));
    log::info!("grid loss {head:.5} -> {tail:.5} over {} steps", a.steps);
    create(&a.out)?;
    trained.to_container().write(&a.out.join(GRID_FILE))?;
    Ok(json!({"model": to_json(&config), "loss": to_json(&loss), "final_loss": tail}))
}

fn finetune_grid(a: &crate::FinetuneGridArgs) -> Result<Value> {
    let model = GridForecaster::from_container(&read_model(&a.model, GRID_FILE)?)?;
    let train = train_slice(&a.data, a.train_fraction)?;
    let mut loss: LossConfig = load_toml(a.loss.as_ref())?;
    loss.bounding_box = Some(BoundingBox::parse(&a.bounding_box)?);
    loss.location_weight = a.omega;
    let loss = loss.resolve(&train)?;
    if loss.box_cells().is_empty() {
        log::warn!(
            "bounding box {} holds no grid cell; the loss is unweighted",
            a.bounding_box
        );
    }
    let (tuned, report) = rollout_train(&model, &train, &loss, a.steps, a.seed)?;
    let (head, tail) = report.moving_average_ends(10.min(a.steps.max(1)));
    log::info!("fine-tune loss {head:.5} -> {tail:.5}");
    create(&a.out)?;
    tuned.to_container().write(&a.out.join(GRID_FILE))?;
    Ok(json!({"loss": to_json(&loss), "final_loss": tail}))
}

fn bias_correct(a: &crate::BiasCorrectArgs) -> Result<Value> {
    let model = GridForecaster::from_container(&read_model(&a.model, GRID_FILE)?)?;
    let train = train_slice(&a.train, a.train_fraction)?;
    let spec = train.spec();
    let wind = spec.variable_index("u10").zip(spec.variable_index("v10"));
    if train.n_times() < a.leads + 4 {
        return Err(Error::invalid(format!(
            "{} training states leave fewer than 3 issues for {} leads",
            train.n_times(),
            a.leads
        )));
    }
    let issues: Vec<usize> = (1..train.n_times() - a.leads).collect();
    let cells: Vec<usize> = (0..spec.n_cells()).collect();
    let (raw, truth) = hindcast(&model, &train, None, &issues, a.leads, &cells, wind)?;
    let bias = fit_bias_correction(&raw, &truth)?;
    let before = per_key_mse(&raw, &truth)?;
    let after = per_key_mse(&apply_bias_correction(&raw, &bias)?, &truth)?;
    log::info!(
        "in-sample MSE {:.5} -> {:.5} over {} issues",
        before.mean().unwrap_or(0.0),
        after.mean().unwrap_or(0.0),
        issues.len()
    );
    create(&a.out)?;
    bias.to_container().write(&a.out.join(BIAS_FILE))?;
    Ok(json!({"issues": issues.len(), "leads": a.leads, "variables": bias.variables}))
}

fn hybrid(a: &crate::PredictHybridArgs) -> Result<Value> {
    let mut config: HybridRunConfig = load_toml(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let mut short = TideSet::from_container(&read_model(&a.short, TIDE_FILE)?)?;
    for m in short.models.values_mut() {
        m.config.n_chains = config.n_chains;
    }
    let grid = GridForecaster::from_container(&read_model(&a.grid, GRID_FILE)?)?;
    let bias = BiasModel::from_container(&read_model(&a.bias, BIAS_FILE)?)?;
    let locations = load_locations_csv(input(&a.locations)?)?;
    let table = stations(&a.data)?;
    let grid_data = load_grid_tensor(&data_file(&a.data, "grid.gt1")?)?;
    let inputs = HybridInputs {
        short: &short,
        grid: &grid,
        bias: &bias,
        grid_data: &grid_data,
        stations: &table,
        locations: &locations,
    };
    let bundle = predict_hybrid(&inputs, &config)?;
    create(&a.out)?;
    bundle.write(&a.out)?;
    Ok(json!({"config": to_json(&config), "records": bundle.records.len()}))
}

fn evaluate(a: &crate::EvaluateArgs) -> Result<Value> {
    let windows = a
        .windows
        .iter()
        .map(|w| parse_window(w))
        .collect::<Result<Vec<_>>>()?;
    let bundle = ForecastBundle::read(input(&a.bundle)?)?;
    let report = skill_report(&bundle, &windows)?;
    emit_report(&report, &a.out)?;
    let summary =
        json!({"crossover_lead": report.crossover_lead, "windows": to_json(&report.windows)});
    write(
        &a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(internal)? + "\n",
    )?;
    Ok(summary)
}
