use std::path::{Path, PathBuf};

use seisdiag::costs::{report, ClassCatalog, ScoreMatrix};
use seisdiag::diagnose::{
    severity_order, train, DiagnoseError, DiagnosisModel, LabeledEvents, Mode, ModelBundle, PatternLabel, Provenance,
};
use seisdiag::signals::feature_len;
use seisdiag::simulator::{build_dataset, SimulatorError};
use seisdiag::svm::{Label, SvmError};
use seisdiag::tuner::TunerError;

use crate::config::{sha256_hex, LoadedConfig};
use crate::dataset::{join_events, read_dataset, read_records, records_path, write_dataset, write_records, DatasetFile, DatasetHeader};
use crate::{Cli, CliError, Command, ModeArg};

/// Largest tolerated share of failed simulations.
const MAX_DROPPED: f64 = 0.10;

fn provenance_line(kind: &str, hash: &str, seed: u64) -> String {
    format!("# seisdiag {kind} config_hash={hash} seed={seed}\n")
}

fn diagnose_err(e: DiagnoseError) -> CliError {
    match e {
        DiagnoseError::Svm(SvmError::NonConvergence { .. })
        | DiagnoseError::Tuner(TunerError::AllFailed(_) | TunerError::Fold { .. }) => CliError::Numerical(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn simulator_err(e: SimulatorError) -> CliError {
    match e {
        SimulatorError::IntegrationFailure { .. } | SimulatorError::Record { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

struct Context<'a> {
    cli: &'a Cli,
    config: Option<LoadedConfig>,
}

impl Context<'_> {
    fn config(&self) -> Result<&LoadedConfig, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs --config".into()))
    }

    /// Output directory, created on demand.
    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .cli
            .out
            .clone()
            .or_else(|| self.config.as_ref().and_then(|c| c.config.paths.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    /// Explicitly requested output directory, if any.
    fn explicit_out(&self) -> Result<Option<PathBuf>, CliError> {
        if self.cli.out.is_some() {
            self.out_dir().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Provenance for outputs derived from a bundle.
    fn provenance_from(&self, fallback: &Provenance) -> (String, u64) {
        match &self.config {
            Some(c) => (c.hash.clone(), c.config.seed),
            None => (fallback.config_hash.clone(), self.cli.seed.unwrap_or(fallback.seed)),
        }
    }
}

pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let config = cli
        .config
        .as_deref()
        .map(|p| LoadedConfig::load(p, cli.seed))
        .transpose()?;
    let ctx = Context { cli, config };
    match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Train { mode, dataset } => train_cmd(&ctx, *mode, dataset.as_deref()),
        Command::Predict {
            bundle,
            dataset,
            features,
        } => predict(&ctx, bundle, dataset.as_deref(), features.as_deref()),
        Command::Report { scores } => report_cmd(&ctx, scores),
        Command::Evaluate { bundle, dataset } => evaluate_cmd(&ctx, bundle, dataset),
    }
}

fn simulate(ctx: &Context<'_>) -> Result<u8, CliError> {
    let lc = ctx.config()?;
    let cfg = &lc.config;
    let hazard = cfg.hazard()?;
    let data = build_dataset(&cfg.building, &cfg.ground_motion, &hazard, cfg.seed).map_err(simulator_err)?;
    let dir = ctx.out_dir()?;
    let header = DatasetHeader {
        config_hash: lc.hash.clone(),
        seed: cfg.seed,
        etas: cfg.etas()?,
        pairs: cfg.pairs()?,
        stories: cfg.building.stories(),
    };
    let csv_path = dir.join("dataset.csv");
    write_dataset(&csv_path, &header, &data.events)?;
    write_records(&records_path(&csv_path), &data.events)?;

    let total = hazard.len();
    println!("wrote {} ({} rows, {} dropped)", csv_path.display(), data.events.len(), data.dropped.len());
    println!("{:<10} {:>6} {:>12}", "pattern", "count", "probability");
    for p in severity_order(header.stories) {
        let members: Vec<_> = data
            .events
            .iter()
            .filter(|e| e.labels.stories == p.stories())
            .collect();
        if members.is_empty() {
            continue;
        }
        let mass: f64 = members.iter().map(|e| e.probability).sum();
        println!("{:<10} {:>6} {:>12.6}", p.to_string(), members.len(), mass);
    }
    let damaged = data.events.iter().filter(|e| e.labels.building == Label::Damaged).count();
    println!("building labels: {} N, {} D", data.events.len() - damaged, damaged);
    for d in &data.dropped {
        eprintln!("dropped: {}", d.reason);
    }
    if data.dropped.len() as f64 > MAX_DROPPED * total as f64 {
        eprintln!(
            "seisdiag: {} of {total} simulations failed (more than {:.0}%)",
            data.dropped.len(),
            MAX_DROPPED * 100.0
        );
        return Ok(3);
    }
    Ok(0)
}

fn train_cmd(ctx: &Context<'_>, mode: ModeArg, dataset: Option<&Path>) -> Result<u8, CliError> {
    let lc = ctx.config()?;
    let cfg = &lc.config;
    let dir = ctx.out_dir()?;
    let path = dataset
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.dataset.clone())
        .unwrap_or_else(|| dir.join("dataset.csv"));
    let file = read_dataset(&path)?;
    let pairs = cfg.pairs()?;
    let k = cfg.features.eta.len();
    if file.header.etas.len() != k {
        return Err(CliError::Validation(format!(
            "config uses k = {k} exponents but dataset {} has k = {}",
            path.display(),
            file.header.etas.len()
        )));
    }
    if file.header.pairs != pairs {
        return Err(CliError::Validation(format!(
            "config pairs `{}` differ from dataset pairs `{}`",
            pairs.to_compact(),
            file.header.pairs.to_compact()
        )));
    }
    if file.header.stories != cfg.building.stories() {
        return Err(CliError::Validation(format!(
            "config has {} stories, dataset has {}",
            cfg.building.stories(),
            file.header.stories
        )));
    }
    let rec_path = records_path(&path);
    if !rec_path.exists() {
        return Err(CliError::Validation(format!(
            "training re-featurizes raw records; sidecar {} not found",
            rec_path.display()
        )));
    }
    let events = join_events(&file, read_records(&rec_path)?)?;
    for (row, e) in file.rows.iter().zip(&events) {
        let f = e
            .features(&file.header.pairs, &file.header.etas)
            .map_err(|err| CliError::Validation(err.to_string()))?;
        if f.values() != row.features.as_slice() {
            return Err(CliError::Validation(format!(
                "features of `{}` do not match its raw records",
                row.record_id
            )));
        }
    }

    let mode = match mode {
        ModeArg::Existence => Mode::Existence,
        ModeArg::Location => Mode::Location,
    };
    let data = LabeledEvents {
        events: &events,
        pairs: &file.header.pairs,
    };
    let outcome = train(&data, mode, &cfg.diagnose_config()).map_err(diagnose_err)?;

    let prov = provenance_line(&format!("{mode}"), &lc.hash, cfg.seed);
    let bundle = ModelBundle::new(
        &outcome.model,
        Provenance {
            seed: cfg.seed,
            config_hash: lc.hash.clone(),
        },
    );
    write(&dir.join(format!("{mode}_bundle.json")), &(bundle.to_json() + "\n"))?;
    write(
        &dir.join(format!("{mode}_history.csv")),
        &(prov.clone() + &outcome.tuning.history_csv(&outcome.space)),
    )?;
    write(&dir.join(format!("{mode}_scores.csv")), &(prov.clone() + &outcome.scores.to_csv()))?;

    let best = outcome.tuning.best_trial();
    let mut text = prov;
    text.push_str(&format!(
        "mode: {mode}\nreport source: {}\ntrain rows: {}, held-out rows: {}\n",
        match cfg.training.report {
            seisdiag::diagnose::ReportSource::Holdout => "held-out split",
            seisdiag::diagnose::ReportSource::PooledCv => "pooled cross-validation",
        },
        outcome.train_rows.len(),
        outcome.holdout_rows.len()
    ));
    let names = outcome.space.names();
    let point: Vec<String> = names
        .iter()
        .zip(&best.point)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    text.push_str(&format!("incumbent: {}\n", point.join(" ")));
    text.push_str(&format!("incumbent CV cost: {}\n", best.objective));
    text.push_str(&format!("report cost: {}\n\n", outcome.report_cost));
    text.push_str(&outcome.report.render_table());
    text.push('\n');
    write(&dir.join(format!("{mode}_report.txt")), &text)?;
    print!("{text}");
    Ok(0)
}

fn load_model(path: &Path) -> Result<(DiagnosisModel, Provenance), CliError> {
    let bundle = ModelBundle::from_json(&read(path)?).map_err(diagnose_err)?;
    let prov = bundle.provenance.clone();
    Ok((bundle.into_model().map_err(diagnose_err)?, prov))
}

/// Feature rows of `file` in the layout of `model`.
fn model_features(model: &DiagnosisModel, file: &DatasetFile, path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let (k_model, k_data) = (model.etas().len(), file.header.etas.len());
    if k_model != k_data {
        return Err(CliError::Validation(format!(
            "bundle uses k = {k_model} exponents but dataset {} has k = {k_data}",
            path.display()
        )));
    }
    if model.pairs() != &file.header.pairs {
        return Err(CliError::Validation(format!(
            "bundle pairs `{}` differ from dataset pairs `{}`",
            model.pairs().to_compact(),
            file.header.pairs.to_compact()
        )));
    }
    if model.etas() == &file.header.etas || file.rows.is_empty() {
        return Ok(file.rows.iter().map(|r| r.features.clone()).collect());
    }
    let rec_path = records_path(path);
    if !rec_path.exists() {
        return Err(CliError::Validation(format!(
            "bundle exponents differ from the dataset's and sidecar {} is missing",
            rec_path.display()
        )));
    }
    let events = join_events(file, read_records(&rec_path)?)?;
    events
        .iter()
        .map(|e| {
            e.features(model.pairs(), model.etas())
                .map(|f| f.into_values())
                .map_err(|err| CliError::Validation(format!("record {}: {err}", e.record_id)))
        })
        .collect()
}

fn predict(ctx: &Context<'_>, bundle: &Path, dataset: Option<&Path>, features: Option<&str>) -> Result<u8, CliError> {
    let (model, prov) = load_model(bundle)?;
    if let Some(text) = features {
        let row = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Validation(format!("not a number: `{v}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let expected = feature_len(model.etas().len(), model.pairs().len());
        if row.len() != expected {
            return Err(CliError::Validation(format!(
                "bundle expects {expected} features, got {}",
                row.len()
            )));
        }
        println!("{}", model.predict_values(&row).map_err(diagnose_err)?);
        return Ok(0);
    }
    let path = dataset.expect("clap requires --dataset or --features");
    let file = read_dataset(path)?;
    let rows = model_features(&model, &file, path)?;
    let mut lines = Vec::with_capacity(rows.len());
    for (r, x) in file.rows.iter().zip(&rows) {
        lines.push(format!("{},{}", r.record_id, model.predict_values(x).map_err(diagnose_err)?));
    }
    if !lines.is_empty() {
        println!("record_id,label");
        for l in &lines {
            println!("{l}");
        }
    }
    if let Some(dir) = ctx.explicit_out()? {
        let (hash, seed) = ctx.provenance_from(&prov);
        let mut text = provenance_line("predictions", &hash, seed);
        text.push_str("record_id,label\n");
        for l in &lines {
            text.push_str(l);
            text.push('\n');
        }
        write(&dir.join("predictions.csv"), &text)?;
    }
    Ok(0)
}

fn truth_label(model: &DiagnosisModel, stories: &[Label], building: Label) -> String {
    match model.mode() {
        Mode::Existence => building.letter().to_string(),
        Mode::Location => PatternLabel::new(stories.to_vec()).to_string(),
    }
}

fn evaluate_cmd(ctx: &Context<'_>, bundle: &Path, dataset: &Path) -> Result<u8, CliError> {
    let (model, prov) = load_model(bundle)?;
    let file = read_dataset(dataset)?;
    if file.rows.is_empty() {
        return Err(CliError::Validation(format!("{} has no rows to evaluate", dataset.display())));
    }
    let rows = model_features(&model, &file, dataset)?;
    let catalog: ClassCatalog = model.catalog();
    let index = |label: &str| {
        catalog
            .index_of(label)
            .ok_or_else(|| CliError::Validation(format!("class `{label}` is not in the bundle catalog")))
    };
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    for (r, x) in file.rows.iter().zip(&rows) {
        truths.push(index(&truth_label(&model, &r.stories, r.building))?);
        preds.push(index(&model.predict_values(x).map_err(diagnose_err)?)?);
    }
    let probs: Vec<f64> = file.rows.iter().map(|r| r.probability).collect();
    let mut scores = ScoreMatrix::zeros(catalog.clone());
    scores
        .accumulate(&truths, &preds, &probs)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let rep = report(&scores).map_err(|e| CliError::Validation(e.to_string()))?;
    let (hash, seed) = ctx.provenance_from(&prov);
    let prov_line = provenance_line("evaluation", &hash, seed);
    let dir = ctx.out_dir()?;
    write(&dir.join("evaluation_scores.csv"), &(prov_line.clone() + &scores.to_csv()))?;
    let text = prov_line + &rep.render_table() + "\n";
    write(&dir.join("evaluation_report.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

/// Carry over `config_hash` and `seed` from the first comment of an input file.
fn forwarded_provenance(text: &str) -> (String, String) {
    let field = |key: &str| {
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .flat_map(str::split_whitespace)
            .find_map(|t| t.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .map(String::from)
    };
    (
        field("config_hash").unwrap_or_else(|| sha256_hex(text.as_bytes())),
        field("seed").unwrap_or_else(|| "none".into()),
    )
}

fn report_cmd(ctx: &Context<'_>, scores: &Path) -> Result<u8, CliError> {
    let text = read(scores)?;
    let matrix = ScoreMatrix::from_csv(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let rep = report(&matrix).map_err(|e| CliError::Validation(e.to_string()))?;
    let table = rep.render_table() + "\n";
    print!("{table}");
    if let Some(dir) = ctx.explicit_out()? {
        let (hash, seed) = match &ctx.config {
            Some(c) => (c.hash.clone(), c.config.seed.to_string()),
            None => forwarded_provenance(&text),
        };
        write(
            &dir.join("report.txt"),
            &format!("# seisdiag report config_hash={hash} seed={seed}\n{table}"),
        )?;
    }
    Ok(0)
}
