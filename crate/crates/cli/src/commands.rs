use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aeapt_core::data::{
    export_dense_csv, export_sparse, generate_synthetic, ingest_dense_csv, ingest_sparse,
    merge_views, read_labels, split_normal, write_labels, BooleanDataset, DatasetMeta, LabelSet,
    SyntheticSpec, View,
};
use aeapt_core::eval::{avf_ranking, ndcg, rank_processes, run_ensemble, RankingReport};
use aeapt_core::models::{fit, load_model, save_model, Architecture, TrainedModel};
use aeapt_core::report::{config_digest, emit_report, ReportRecord, RunReport};
use aeapt_core::viz::{ranking_band_svg, reconstruction_grid_pgm, reconstruction_grid_svg, GridLayout};
use aeapt_core::Error;

use crate::config::{message, RunConfig};
use crate::{Cli, Command, DataArgs};

type Result<T> = std::result::Result<T, String>;

fn fail(e: Error) -> String {
    message(&e)
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(fail)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = env::var_os("AEAPT_OUT").filter(|v| !v.is_empty()) {
        config.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli)?;
    if cli.print_config {
        print!("{}", config.render());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Ok(());
    };
    match command {
        Command::Ingest { input, pe, px, pp, pn, to } => {
            ingest(&config, input, [pe, px, pp, pn], &to)
        }
        Command::Synth { normal, anomalies, attributes, seed } => synth(
            &config,
            &SyntheticSpec {
                normal_count: normal,
                anomaly_count: anomalies,
                attribute_count: attributes,
                seed: seed.unwrap_or(config.seed),
                ..SyntheticSpec::default()
            },
        ),
        Command::Train { data, arch } => train(&config, &data, &arch),
        Command::Score { model, data } => score(&config, &model, &data),
        Command::Evaluate { model, data } => evaluate(&config, &model, &data),
        Command::Ensemble { data } => ensemble(&config, &data),
        Command::RenderBand { scores, labels, title } => {
            render_band(&config, &scores, labels.as_deref(), &title)
        }
        Command::RenderGrid { model, data, id } => render_grid(&config, &model, &data, id),
    }
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", config.out_dir.display()))?;
    Ok(&config.out_dir)
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_dataset(path: &Path, meta: DatasetMeta) -> Result<BooleanDataset> {
    if !path.exists() {
        return Err(format!("dataset {} does not exist", path.display()));
    }
    let dense = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if dense {
        ingest_dense_csv(path, meta).map_err(fail)
    } else {
        ingest_sparse(path, meta).map_err(fail)
    }
}

fn dataset(config: &RunConfig, args: &DataArgs) -> Result<BooleanDataset> {
    let path = args
        .data
        .as_ref()
        .or(config.data.as_ref())
        .ok_or("no dataset given; pass --data FILE or set `data` in the config")?;
    load_dataset(path, config.meta())
}

fn optional_labels(config: &RunConfig, args: &DataArgs) -> Result<Option<LabelSet>> {
    match args.labels.as_ref().or(config.labels.as_ref()) {
        Some(path) => read_labels(path).map(Some).map_err(fail),
        None => Ok(None),
    }
}

fn required_labels(config: &RunConfig, args: &DataArgs, why: &str) -> Result<LabelSet> {
    let labels = optional_labels(config, args)?.ok_or_else(|| {
        format!("{why} needs ground-truth labels; pass --labels FILE or set `labels` in the config")
    })?;
    if labels.is_empty() {
        return Err(format!("{why} needs at least one labelled anomaly"));
    }
    Ok(labels)
}

/// Comment line carrying the seed and config digest of an artifact.
fn provenance(seed: u64, digest: &str) -> String {
    format!("seed={seed} config={digest}")
}

fn stamp_svg(svg: String, tag: &str) -> String {
    match svg.split_once('\n') {
        Some((head, rest)) => format!("{head}\n<!-- {tag} -->\n{rest}"),
        None => svg,
    }
}

fn model_provenance(model: &TrainedModel) -> Result<String> {
    let digest = config_digest(std::slice::from_ref(model.config())).map_err(fail)?;
    Ok(provenance(model.config().seed, &digest))
}

fn ingest(
    config: &RunConfig,
    input: Option<PathBuf>,
    views: [Option<PathBuf>; 4],
    to: &str,
) -> Result<()> {
    let dataset = match (input, views) {
        (Some(path), _) => load_dataset(&path, config.meta())?,
        (None, [Some(pe), Some(px), Some(pp), Some(pn)]) => {
            let read = |path: &Path, view: View| {
                load_dataset(path, DatasetMeta::new(view, config.os.clone(), config.scenario.clone()))
            };
            merge_views(
                &read(&pe, View::Event)?,
                &read(&px, View::Exec)?,
                &read(&pp, View::Parent)?,
                &read(&pn, View::Netflow)?,
            )
            .map_err(fail)?
        }
        _ => return Err("pass --input FILE or all of --pe, --px, --pp and --pn".into()),
    };
    let dir = out_dir(config)?;
    let path = match to {
        "dense" => {
            let p = dir.join("dataset.csv");
            export_dense_csv(&dataset, &p).map_err(fail)?;
            p
        }
        "sparse" => {
            let p = dir.join("dataset.sparse");
            export_sparse(&dataset, &p).map_err(fail)?;
            p
        }
        other => return Err(format!("unknown output format `{other}`; use dense or sparse")),
    };
    println!(
        "{}: {} processes, {} attributes ({})",
        path.display(),
        dataset.len(),
        dataset.attribute_count(),
        dataset.view()
    );
    Ok(())
}

fn synth(config: &RunConfig, spec: &SyntheticSpec) -> Result<()> {
    let (dataset, labels) = generate_synthetic(spec).map_err(fail)?;
    let dir = out_dir(config)?;
    export_dense_csv(&dataset, &dir.join("dataset.csv")).map_err(fail)?;
    write_labels(&labels, &dir.join("labels.txt")).map_err(fail)?;
    let manifest = serde_json::json!({
        "seed": spec.seed,
        "normal_count": spec.normal_count,
        "anomaly_count": spec.anomaly_count,
        "attribute_count": spec.attribute_count,
        "normal_density": spec.normal_density,
        "anomaly_tail_density": spec.anomaly_tail_density,
        "background_density": spec.background_density,
    });
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())? + "\n";
    write(&dir.join("synth.json"), &body)?;
    println!(
        "{}: {} processes ({} anomalous), {} attributes",
        dir.display(),
        dataset.len(),
        labels.len(),
        dataset.attribute_count()
    );
    Ok(())
}

fn train(config: &RunConfig, args: &DataArgs, arch: &str) -> Result<()> {
    let architecture: Architecture = arch.parse().map_err(fail)?;
    let data = dataset(config, args)?;
    let model_config = config
        .model_config(architecture, data.attribute_count())
        .map_err(fail)?;
    let train = match optional_labels(config, args)? {
        Some(labels) => split_normal(&data, &labels).train,
        None => data,
    };
    let model = fit(&model_config, &train).map_err(fail)?;
    let path = out_dir(config)?.join(format!("{architecture}.model"));
    save_model(&model, &path).map_err(fail)?;
    let loss = model.loss_trace().last().map_or(f64::NAN, |p| p.1);
    println!(
        "{}: {architecture} trained on {} rows, final loss {loss:.6}",
        path.display(),
        train.len()
    );
    Ok(())
}

fn load(path: &Path) -> Result<TrainedModel> {
    load_model(path).map_err(fail)
}

fn score(config: &RunConfig, model_path: &Path, args: &DataArgs) -> Result<()> {
    let model = load(model_path)?;
    let data = dataset(config, args)?;
    let scores = model.score_all(&data).map_err(fail)?;
    let path = out_dir(config)?.join("scores.csv");
    let mut body = format!("# {}\n", model_provenance(&model)?);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut rows = || -> csv::Result<()> {
        writer.write_record(["id", "score"])?;
        for (id, s) in data.ids().iter().zip(&scores) {
            writer.write_record([id.as_str(), &format!("{s:e}")])?;
        }
        writer.flush()?;
        Ok(())
    };
    rows().map_err(|e| e.to_string())?;
    body.push_str(&String::from_utf8(writer.into_inner().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?);
    write(&path, &body)?;
    println!("{}: {} scores", path.display(), scores.len());
    Ok(())
}

fn band(path: &Path, ranking: &RankingReport, label: &str, tag: &str) -> Result<()> {
    let svg = ranking_band_svg(ranking, label).map_err(fail)?;
    write(path, &stamp_svg(svg, tag))
}

fn avf_record(data: &BooleanDataset, labels: &LabelSet) -> Result<ReportRecord> {
    let metrics = avf_ranking(data, labels).and_then(|r| ndcg(&r)).map_err(fail)?;
    Ok(ReportRecord::evaluated("AVF", &metrics, None))
}

fn evaluate(config: &RunConfig, model_path: &Path, args: &DataArgs) -> Result<()> {
    let labels = required_labels(config, args, "evaluate")?;
    let model = load(model_path)?;
    let data = dataset(config, args)?;
    let start = Instant::now();
    let scores = model.score_all(&data).map_err(fail)?;
    let ranking = rank_processes(&scores, data.ids(), &labels).map_err(fail)?;
    let metrics = ndcg(&ranking).map_err(fail)?;
    let elapsed = start.elapsed();
    let name = model.architecture().name();
    let record = ReportRecord::evaluated(name, &metrics, model.loss_trace().last().map(|p| p.1));
    let mut report = RunReport::new(std::slice::from_ref(model.config()), &data, &labels, vec![record])
        .map_err(fail)?
        .with_baseline(avf_record(&data, &labels)?);
    report.record_time(name, elapsed);
    let dir = out_dir(config)?;
    let paths = emit_report(&report, dir).map_err(fail)?;
    band(&dir.join(format!("{name}-band.svg")), &ranking, name, &model_provenance(&model)?)?;
    println!(
        "{name}: nDCG {:.4}, anomaly ranks {:?}; AVF nDCG {:.4}; wrote {}",
        metrics.ndcg,
        metrics.anomaly_ranks,
        report.baseline.as_ref().and_then(|b| b.ndcg).unwrap_or(f64::NAN),
        paths.json.display()
    );
    Ok(())
}

fn ensemble(config: &RunConfig, args: &DataArgs) -> Result<()> {
    let labels = required_labels(config, args, "ensemble winner election")?;
    let data = dataset(config, args)?;
    let configs = config.model_configs(data.attribute_count()).map_err(fail)?;
    let run = run_ensemble(&data, &labels, &configs).map_err(fail)?;
    let report = RunReport::from_ensemble(&run.result, &configs, &data, &labels)
        .map_err(fail)?
        .with_baseline(avf_record(&data, &labels)?);
    let dir = out_dir(config)?;
    let paths = emit_report(&report, dir).map_err(fail)?;
    let tag = provenance(report.seed, &report.config_digest);
    for model in run.models.iter().flatten() {
        let name = model.architecture().name();
        save_model(model, &dir.join(format!("{name}.model"))).map_err(fail)?;
        let scores = model.score_all(&data).map_err(fail)?;
        let ranking = rank_processes(&scores, data.ids(), &labels).map_err(fail)?;
        band(&dir.join(format!("{name}-band.svg")), &ranking, name, &tag)?;
    }
    for o in &run.result.outcomes {
        match (o.ndcg(), &o.error) {
            (Some(v), _) => println!("{:<7} nDCG {v:.4}", o.architecture.name()),
            (None, e) => println!(
                "{:<7} diverged: {}",
                o.architecture.name(),
                e.as_deref().unwrap_or("unknown")
            ),
        }
    }
    println!(
        "winner: {} (nDCG {:.4}); wrote {}",
        run.result.winner,
        run.result.winner_ndcg,
        paths.json.display()
    );
    Ok(())
}

fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<f64>, Option<String>)> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let tag = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .map(str::to_owned);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let (mut ids, mut scores) = (Vec::new(), Vec::new());
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let bad = || format!("{}: record {} is not `id,score`", path.display(), n + 1);
        let (Some(id), Some(s)) = (record.get(0), record.get(1)) else {
            return Err(bad());
        };
        ids.push(id.to_owned());
        scores.push(s.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok((ids, scores, tag))
}

fn render_band(config: &RunConfig, scores: &Path, labels: Option<&Path>, title: &str) -> Result<()> {
    let labels_path = labels
        .or(config.labels.as_deref())
        .ok_or("render-band needs ground-truth labels; pass --labels FILE or set `labels` in the config")?;
    let labels = read_labels(labels_path).map_err(fail)?;
    let (ids, scores, tag) = read_scores(scores)?;
    let ranking = rank_processes(&scores, &ids, &labels).map_err(fail)?;
    let path = out_dir(config)?.join("band.svg");
    let tag = tag.unwrap_or_else(|| provenance(config.seed, "unknown"));
    band(&path, &ranking, title, &tag)?;
    println!("{}: {} anomalies among {} processes", path.display(), ranking.anomaly_count(), ranking.len());
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn render_grid(config: &RunConfig, model_path: &Path, args: &DataArgs, id: Option<String>) -> Result<()> {
    let model = load(model_path)?;
    let data = dataset(config, args)?;
    if data.is_empty() {
        return Err("dataset has no processes".into());
    }
    let row = match &id {
        Some(id) => data
            .index_of(id)
            .ok_or_else(|| format!("process `{id}` is not in the dataset"))?,
        None => 0,
    };
    let x = data.dense_row(row);
    let x_rec = model.reconstruct(&x).map_err(fail)?;
    let layout = GridLayout::for_attributes(x.len()).map_err(fail)?;
    let tag = model_provenance(&model)?;
    let stem = format!("grid-{}", file_stem(&data.ids()[row]));
    let dir = out_dir(config)?;
    let svg = reconstruction_grid_svg(&x, &x_rec, layout).map_err(fail)?;
    write(&dir.join(format!("{stem}.svg")), &stamp_svg(svg, &tag))?;
    let pgm = reconstruction_grid_pgm(&x, &x_rec, layout).map_err(fail)?;
    let pgm = pgm.replacen("P2\n", &format!("P2\n# {tag}\n"), 1);
    write(&dir.join(format!("{stem}.pgm")), &pgm)?;
    println!(
        "{}: {}×{} grid for `{}`",
        dir.join(format!("{stem}.svg")).display(),
        layout.rows,
        layout.cols,
        data.ids()[row]
    );
    Ok(())
}
