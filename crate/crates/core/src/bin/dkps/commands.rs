use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Parser;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use dkps::cache::{self, BenchmarkDataset, EmbeddingFormat, ModelId, QueryId};
use dkps::config::{load_toml, ConcentrationSettings, ExperimentFile, SynthFile, TheoryFile};
use dkps::geometry::build_dkps;
use dkps::harness::{self, ExperimentConfig, PredictOptions};
use dkps::irt::{fit_difficulties, irt_predict_score, CorrectnessMatrix};
use dkps::predictors::{KChoice, Method, Regressor};
use dkps::selection::{select_query_set, SelectionConfig};
use dkps::synth;

use crate::args::*;
use crate::output::{dataset_checksum, write_atomic, write_manifest, OutputDir, RunManifest};
use crate::ValidationFailed;

pub fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Validate(a) => validate(a),
        Command::Dkps(a) => perspectives(a, argv),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a, workers, argv),
        Command::Sweep(a) => sweep(a, workers, argv),
        Command::SelectQueries(a) => select_queries(a, workers, argv),
        Command::IrtFit(a) => irt_fit(a, argv),
        Command::Synth(a) => synthesize(a, argv),
        Command::Theory(a) => theory(a, workers, argv),
        Command::Replay(a) => replay(a),
    }
}

fn load(dir: &Path) -> Result<BenchmarkDataset> {
    let format = EmbeddingFormat::detect(dir)?;
    let ds = cache::load_dataset(dir, format)?;
    info!(
        "loaded {}: {} models, {} queries, p = {}, r = {}",
        dir.display(),
        ds.num_models(),
        ds.num_queries(),
        ds.embedding_dim(),
        ds.replicates()
    );
    Ok(ds)
}

fn csv_err(e: csv::Error) -> dkps::Error {
    dkps::Error::Parse {
        location: "csv output".into(),
        message: e.to_string(),
    }
}

fn io_err(e: std::io::Error) -> dkps::Error {
    dkps::Error::Io {
        path: "output".into(),
        source: e,
    }
}

/// Ids listed one per line; blank lines and `#` comments are skipped.
fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| dkps::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// `m` of the dataset's queries drawn with `seed`, in dataset order.
fn random_queries(ds: &BenchmarkDataset, m: usize, seed: u64) -> Result<Vec<QueryId>> {
    let total = ds.num_queries();
    if m == 0 || m > total {
        return Err(dkps::Error::Config(format!("m = {m} must lie in 1..={total}")).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, m).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|j| ds.queries()[j].clone()).collect())
}

/// Parses `FILE` or `m,seed`.
fn query_spec(ds: &BenchmarkDataset, spec: &str) -> Result<Vec<QueryId>> {
    if let Some((m, seed)) = spec.split_once(',') {
        if let (Ok(m), Ok(seed)) = (m.trim().parse(), seed.trim().parse()) {
            return random_queries(ds, m, seed);
        }
    }
    let ids = read_id_list(Path::new(spec))?;
    if ids.is_empty() {
        return Err(dkps::Error::Config(format!("{spec} lists no queries")).into());
    }
    Ok(ids.into_iter().map(QueryId::new).collect())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let format = EmbeddingFormat::detect(&a.dir)?;
    let records = cache::read_records(&a.dir, format).map_err(|e| match e {
        e @ dkps::Error::Io { .. } => anyhow::Error::from(e),
        other => ValidationFailed(other.to_string()).into(),
    })?;
    let report = cache::validate_common_query_set(&records);
    let built = if report.passed {
        BenchmarkDataset::from_records(records).map(Some)
    } else {
        Ok(None)
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    match built {
        Ok(Some(ds)) => {
            if !a.json {
                println!(
                    "ok: {} models in {} families, {} queries, p = {}, r = {}, response scores: {}, correctness: {}",
                    ds.num_models(),
                    ds.families().len(),
                    ds.num_queries(),
                    ds.embedding_dim(),
                    ds.replicates(),
                    ds.has_response_scores(),
                    ds.has_correctness()
                );
            }
            Ok(())
        }
        Ok(None) => {
            if !a.json {
                for msg in &report.messages {
                    eprintln!("{msg}");
                }
            }
            Err(ValidationFailed(format!(
                "{} missing (model, query) pairs, {} replicate mismatches",
                report.missing_pairs.len(),
                report.replicate_mismatches.len()
            ))
            .into())
        }
        Err(e) => Err(ValidationFailed(e.to_string()).into()),
    }
}

fn perspectives(a: DkpsArgs, argv: &[String]) -> Result<()> {
    let ds = load(&a.dir)?;
    let queries = query_spec(&ds, &a.queries)?;
    let targets: Vec<ModelId> = a.targets.iter().map(ModelId::new).collect();
    for t in &targets {
        ds.model_index(t)?;
    }
    let references: Vec<ModelId> = ds
        .models()
        .iter()
        .map(|r| r.id.clone())
        .filter(|id| !targets.contains(id))
        .collect();
    let space = build_dkps(&ds.view(), &references, &targets, &queries, a.dim)?;
    let Some(out) = a.out else {
        let stdout = std::io::stdout();
        space.write_csv(stdout.lock())?;
        return Ok(());
    };
    write_atomic(&out, |w| space.write_csv(w))?;
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut manifest = RunManifest::new(
        "dkps",
        argv,
        json!({
            "dim": a.dim,
            "queries": queries.iter().map(|q| q.as_str()).collect::<Vec<_>>(),
            "targets": a.targets,
        }),
    );
    manifest.dataset_sha256 = Some(dataset_checksum(&a.dir)?);
    manifest.outputs = vec![name.clone()];
    write_manifest(
        &out.with_file_name(format!("{name}.manifest.json")),
        &manifest,
    )
}

fn parse_method(name: &str, k: usize) -> Result<Method> {
    let name = name.trim();
    let method = match name {
        "dkps_knn" => Method::Dkps(Regressor::Knn(KChoice::Fixed(k))),
        "ensemble_knn" => Method::Ensemble(Regressor::Knn(KChoice::Fixed(k))),
        other => other.parse()?,
    };
    Ok(method)
}

fn predict(a: PredictArgs) -> Result<()> {
    let ds = load(&a.dir)?;
    let target = ModelId::new(&a.target);
    let t = ds.model_index(&target)?;
    let methods = a
        .methods
        .iter()
        .map(|m| parse_method(m, a.k))
        .collect::<Result<Vec<_>>>()?;
    let queries = match (&a.queries, a.m) {
        (Some(file), _) => query_spec(&ds, &file.to_string_lossy())?,
        (None, Some(m)) => random_queries(&ds, m, a.seed)?,
        (None, None) => bail!(dkps::Error::Config("give --m or --queries".into())),
    };
    let references: Vec<ModelId> = match &a.references {
        Some(file) => read_id_list(file)?.into_iter().map(ModelId::new).collect(),
        None => {
            let family = &ds.model(t).family;
            ds.models()
                .iter()
                .filter(|r| r.id != target && !(a.exclude_family && &r.family == family))
                .map(|r| r.id.clone())
                .collect()
        }
    };
    let options = PredictOptions {
        dim: a.dim,
        alpha: a.alpha,
        clip_order: a.clip_order.map(Into::into).unwrap_or_default(),
        irt_threshold: a.irt_threshold,
    };
    let predictions =
        harness::predict_targets(&ds, &references, &[target], &queries, &methods, &options)?;
    let stdout = std::io::stdout();
    let mut out = csv::Writer::from_writer(stdout.lock());
    out.write_record(["model_id", "method", "m", "prediction"])?;
    for p in predictions {
        out.write_record([
            p.model.to_string(),
            p.method.to_string(),
            queries.len().to_string(),
            p.value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn apply_overrides(config: &mut ExperimentConfig, o: &ExperimentOverrides) {
    if let Some(v) = &o.methods {
        config.methods = v.clone();
    }
    if let Some(v) = &o.m {
        config.m = v.clone();
    }
    if let Some(v) = o.n {
        config.n = v;
    }
    if let Some(v) = o.dim {
        config.dim = v;
    }
    if let Some(v) = o.alpha {
        config.alpha = v;
    }
    if let Some(v) = o.trials {
        config.trials = v;
    }
    if let Some(v) = o.seed {
        config.base_seed = v;
    }
    if let Some(v) = o.clip_order {
        config.clip_order = v.into();
    }
    if let Some(v) = o.irt_threshold {
        config.irt_threshold = v;
    }
}

/// Sample score against the plain ensemble when both ran, otherwise against
/// the first ensemble method.
fn delta_pair(methods: &[Method]) -> Option<(Method, Method)> {
    if !methods.contains(&Method::SampleScore) {
        return None;
    }
    let preferred = Method::Ensemble(Regressor::Ols);
    if methods.contains(&preferred) {
        return Some((Method::SampleScore, preferred));
    }
    methods
        .iter()
        .find(|m| m.is_ensemble())
        .map(|&m| (Method::SampleScore, m))
}

fn evaluate(a: EvaluateArgs, workers: Option<usize>, argv: &[String]) -> Result<()> {
    let file: ExperimentFile = load_toml(&a.config)?;
    let mut config = file.to_config();
    apply_overrides(&mut config, &a.overrides);
    config.workers = workers;
    let collections = a.collections.or(file.collections);
    let ds = load(&a.dir)?;
    config.validate(&ds)?;

    let report = harness::lofo_evaluate(&ds, &config)?;
    let mut out = OutputDir::create(&a.out)?;
    out.write("report.csv", |w| report.write_report_csv(w))?;
    out.write("report.json", |w| report.write_report_json(w))?;
    out.write("summary.csv", |w| report.write_summary_csv(w))?;
    out.write("summary.json", |w| report.write_summary_json(w))?;
    match delta_pair(&config.methods) {
        Some((baseline, contender)) => {
            let deltas = harness::delta_report_between(&report, baseline, contender)?;
            out.write("deltas.csv", |w| deltas.write_csv(w))?;
            out.write("deltas.json", |w| deltas.write_json(w))?;
        }
        None => info!("no sample_score / ensemble pair; skipping deltas"),
    }
    if let Some(c) = collections {
        let stats = harness::reference_collection_stats(&ds, config.n, c, &config)?;
        out.write("collections.csv", |w| {
            harness::CollectionStats::write_csv(&stats, w)
        })?;
    }
    for row in report.summary() {
        info!("{} m={} MAE {:.4}", row.method, row.m, row.mae);
    }

    let mut resolved = serde_json::to_value(&config)?;
    resolved["collections"] = json!(collections);
    let mut manifest = RunManifest::new("evaluate", argv, resolved);
    manifest.dataset_sha256 = Some(dataset_checksum(&a.dir)?);
    manifest.seed = Some(config.base_seed);
    out.finish(manifest)
}

fn sweep(a: SweepArgs, workers: Option<usize>, argv: &[String]) -> Result<()> {
    let file: ExperimentFile = load_toml(&a.grid)?;
    let mut grid = file.to_grid()?;
    apply_overrides(&mut grid.base, &a.overrides);
    if let Some(n) = a.overrides.n {
        grid.n = vec![n];
    }
    if let Some(d) = a.overrides.dim {
        grid.dim = vec![d];
    }
    if let Some(alpha) = a.overrides.alpha {
        grid.alpha = vec![alpha];
    }
    grid.base.workers = workers;
    let ds = load(&a.dir)?;
    let cells = harness::sweep(&ds, &grid)?;
    let mut out = OutputDir::create(&a.out)?;
    out.write("sweep.csv", |w| harness::write_sweep_csv(&cells, w))?;
    out.write("sweep.json", |w| harness::write_sweep_json(&cells, w))?;
    let mut manifest = RunManifest::new("sweep", argv, serde_json::to_value(&grid)?);
    manifest.dataset_sha256 = Some(dataset_checksum(&a.dir)?);
    manifest.seed = Some(grid.base.base_seed);
    out.finish(manifest)
}

/// Model indices outside `family`, which must exist when given.
fn references_excluding(ds: &BenchmarkDataset, family: Option<&str>) -> Result<Vec<usize>> {
    if let Some(f) = family {
        if !ds.models().iter().any(|r| r.family.as_str() == f) {
            return Err(dkps::Error::UnknownId {
                kind: "family",
                id: f.to_string(),
            }
            .into());
        }
    }
    Ok((0..ds.num_models())
        .filter(|&i| Some(ds.model(i).family.as_str()) != family)
        .collect())
}

fn select_queries(a: SelectArgs, workers: Option<usize>, argv: &[String]) -> Result<()> {
    let ds = load(&a.dir)?;
    let references = references_excluding(&ds, a.exclude_family.as_deref())?;
    let config = SelectionConfig {
        m: a.m,
        candidates: a.candidates,
        dim: a.dim,
        seed: a.seed,
        criterion: a.criterion.into(),
        workers,
    };
    let result = select_query_set(&ds, &references, &config)?;
    let selected: Vec<&QueryId> = result
        .best
        .queries
        .iter()
        .map(|&j| &ds.queries()[j])
        .collect();
    println!(
        "candidate {} (R^2 = {:.6}): {}",
        result.best.index,
        result.best.r2,
        selected
            .iter()
            .map(|q| q.as_str())
            .collect::<Vec<_>>()
            .join(",")
    );

    let mut out = OutputDir::create(&a.out)?;
    out.write("candidates.csv", |w| {
        result.write_candidates_csv(ds.queries(), w)
    })?;
    out.write("selected_queries.txt", |w| {
        for q in &selected {
            writeln!(w, "{q}").map_err(io_err)?;
        }
        Ok(())
    })?;
    let mut resolved = serde_json::to_value(&config)?;
    resolved["exclude_family"] = json!(a.exclude_family);
    resolved["failures"] = json!(result.failures);
    let mut manifest = RunManifest::new("select-queries", argv, resolved);
    manifest.dataset_sha256 = Some(dataset_checksum(&a.dir)?);
    manifest.seed = Some(a.seed);
    out.finish(manifest)
}

fn irt_fit(a: IrtFitArgs, argv: &[String]) -> Result<()> {
    let ds = load(&a.dir)?;
    let references = references_excluding(&ds, a.exclude_family.as_deref())?;
    let matrix = CorrectnessMatrix::from_dataset(&ds, &references, a.threshold)?;
    let bank = fit_difficulties(&matrix, ds.queries().to_vec())?;
    for w in &bank.diagnostics.warnings {
        log::warn!("{w}");
    }
    info!(
        "Rasch fit: {} iterations, converged {}, log-likelihood {:.6}",
        bank.diagnostics.iterations, bank.diagnostics.converged, bank.diagnostics.log_likelihood
    );

    let all: Vec<usize> = (0..ds.num_models()).collect();
    let responses = CorrectnessMatrix::from_dataset(&ds, &all, a.threshold)?;
    let mut out = OutputDir::create(&a.out)?;
    out.write("item_bank.csv", |w| bank.write_csv(w))?;
    out.write_json("irt_diagnostics.json", &bank.diagnostics)?;
    out.write("abilities.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "model_id",
            "family_id",
            "theta",
            "standard_error",
            "clamped",
            "irt_score",
            "in_bank",
        ])
        .map_err(csv_err)?;
        for &i in &all {
            let (items, answers): (Vec<usize>, Vec<bool>) = (0..ds.num_queries())
                .filter_map(|j| responses.get(i, j).map(|c| (j, c)))
                .unzip();
            let est = bank.fit_ability(&items, &answers)?;
            let record = ds.model(i);
            csv.write_record([
                record.id.to_string(),
                record.family.to_string(),
                est.theta.to_string(),
                est.standard_error.to_string(),
                est.clamped.to_string(),
                irt_predict_score(est.theta, &bank).to_string(),
                references.contains(&i).to_string(),
            ])
            .map_err(csv_err)?;
        }
        csv.flush().map_err(io_err)
    })?;
    let resolved = json!({ "threshold": a.threshold, "exclude_family": a.exclude_family });
    let mut manifest = RunManifest::new("irt-fit", argv, resolved);
    manifest.dataset_sha256 = Some(dataset_checksum(&a.dir)?);
    out.finish(manifest)
}

fn synthesize(a: SynthArgs, argv: &[String]) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => load_toml::<SynthFile>(path)?.population,
        None => Default::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let population = synth::generate_population(&spec)?;
    let format = match a.format {
        FormatArg::Jsonl => EmbeddingFormat::RecordLines,
        FormatArg::Bin => EmbeddingFormat::Columnar,
    };
    cache::save_dataset(&population.dataset, &a.out, format)?;
    let mut out = OutputDir::create(&a.out)?;
    out.record(
        cache::DATASET_FILES
            .iter()
            .filter(|f| a.out.join(f).is_file())
            .map(|f| f.to_string()),
    );
    out.write_json("truth.json", &population.truth)?;
    info!(
        "wrote {} models x {} queries to {} (effective Lipschitz constant {:.4})",
        spec.n_models,
        spec.n_queries,
        a.out.display(),
        population.truth.gamma_eff
    );
    let mut manifest = RunManifest::new("synth", argv, serde_json::to_value(&spec)?);
    manifest.dataset_sha256 = Some(dataset_checksum(&a.out)?);
    manifest.seed = Some(spec.seed);
    out.finish(manifest)
}

fn theory(a: TheoryArgs, workers: Option<usize>, argv: &[String]) -> Result<()> {
    let mut file: TheoryFile = load_toml(&a.spec)?;
    file.population.validate()?;
    if file.concentration.is_none() && file.efficiency.is_none() {
        file.concentration = Some(ConcentrationSettings::default());
        file.efficiency = Some(Default::default());
    }
    let mut out = OutputDir::create(&a.out)?;
    if let Some(c) = &file.concentration {
        let seeds: Vec<u64> = (0..c.seeds as u64)
            .map(|s| file.population.seed + s)
            .collect();
        let cells = synth::concentration_experiment(&file.population, &c.n, &c.r, &seeds)?;
        out.write("concentration.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record([
                "n_models",
                "replicates",
                "noise",
                "seeds",
                "median_max_error",
            ])
            .map_err(csv_err)?;
            for cell in &cells {
                csv.write_record([
                    cell.n_models.to_string(),
                    cell.replicates.to_string(),
                    cell.noise.to_string(),
                    cell.max_errors.len().to_string(),
                    cell.median_max_error.to_string(),
                ])
                .map_err(csv_err)?;
            }
            csv.flush().map_err(io_err)
        })?;
        out.write_json(
            "concentration.json",
            &json!({ "schema_version": 1, "cells": cells }),
        )?;
    }
    if let Some(settings) = &file.efficiency {
        let report = synth::efficiency_experiment(&file.population, settings, workers)?;
        out.write("efficiency.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["n", "method", "m", "mae"])
                .map_err(csv_err)?;
            for row in &report.rows {
                csv.write_record([
                    row.n.to_string(),
                    row.method.to_string(),
                    row.m.to_string(),
                    row.mae.to_string(),
                ])
                .map_err(csv_err)?;
            }
            csv.flush().map_err(io_err)
        })?;
        out.write("crossovers.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["n", "method", "m"]).map_err(csv_err)?;
            for c in &report.crossovers {
                let m = c.m.map(|m| m.to_string()).unwrap_or_default();
                csv.write_record([c.n.to_string(), c.method.to_string(), m])
                    .map_err(csv_err)?;
            }
            csv.flush().map_err(io_err)
        })?;
        out.write_json(
            "efficiency.json",
            &json!({ "schema_version": 1, "efficiency": report }),
        )?;
    }
    let mut manifest = RunManifest::new("theory", argv, serde_json::to_value(&file)?);
    manifest.seed = Some(file.population.seed);
    out.finish(manifest)
}

/// `argv` with the value of `--out` replaced.
fn redirect_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.to_string_lossy().into_owned();
    let mut next = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut iter = argv.iter();
    while let Some(arg) = iter.next() {
        if arg == "--out" {
            next.push(arg.clone());
            next.push(out.clone());
            iter.next();
            replaced = true;
        } else if arg.starts_with("--out=") {
            next.push(format!("--out={out}"));
            replaced = true;
        } else {
            next.push(arg.clone());
        }
    }
    if !replaced {
        next.push("--out".into());
        next.push(out);
    }
    next
}

fn replay(a: ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| dkps::Error::Io {
        path: a.manifest.clone(),
        source: e,
    })?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| dkps::Error::Config(format!("{}: {e}", a.manifest.display())))?;
    if manifest.schema_version != crate::output::MANIFEST_SCHEMA_VERSION {
        return Err(dkps::Error::Config(format!(
            "manifest schema_version {} is not supported",
            manifest.schema_version
        ))
        .into());
    }
    let argv = match &a.out {
        Some(out) => redirect_out(&manifest.argv, out),
        None => manifest.argv.clone(),
    };
    let cli = Cli::try_parse_from(&argv).context("recorded command line no longer parses")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!(dkps::Error::Config(
            "a manifest cannot replay another replay".into()
        ));
    }
    info!("replaying: {}", argv.join(" "));
    dispatch(cli, &argv)
}
