//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aeapt_core::data::{
    export_dense_csv, export_sparse, generate_synthetic, ingest_dense_csv, ingest_sparse,
    merge_views, BooleanDataset, DatasetMeta, LabelSet, SyntheticSpec, View,
};
use aeapt_core::eval::{
    avf_ranking, avf_scores, ndcg, rank_processes, run_ensemble, EnsembleRun, RankingReport,
};
use aeapt_core::models::{
    discriminator_gradient, discriminator_objective, fit, generator_gradient, generator_objective,
    model_to_bytes, Architecture, ModelConfig, Network, TrainedModel,
};
use aeapt_core::report::{emit_report, strip_timing, RunReport};
use aeapt_core::tensor::{grad_check, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// DCG by direct evaluation over a relevance vector in rank order.
fn oracle_dcg(rel: &[bool]) -> f64 {
    rel.iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// Maximum DCG over every placement of the relevant entries.
fn oracle_idcg(n: usize, k: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let rel: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        best = best.max(oracle_dcg(&rel));
    }
    best
}

fn ndcg_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = rng.gen_range(1..=10);
        let k = rng.gen_range(1..=n);
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
        let mut flagged: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let j = rng.gen_range(i..n);
            flagged.swap(i, j);
        }
        let labels: LabelSet = flagged[..k].iter().map(|&i| ids[i].clone()).collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let rel: Vec<bool> = order.iter().map(|&i| labels.contains(&ids[i])).collect();
        let expected = oracle_dcg(&rel) / oracle_idcg(n, k);

        let ranking = rank_processes(&scores, &ids, &labels).map_err(|e| e.to_string())?;
        let got = ndcg(&ranking).map_err(|e| e.to_string())?.ndcg;
        let diff = (got - expected).abs();
        worst = worst.max(diff);
        if diff > 1e-12 {
            return Err(format!("case {case}: {got} vs oracle {expected}"));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!("500 instances, max |Δ| = {worst:e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn metric_point_checks() -> Outcome {
    for n in 1..=12 {
        for k in 1..=n {
            let rel: Vec<bool> = (0..n).map(|i| i < k).collect();
            let v = ndcg(&RankingReport::from_relevance(&rel))
                .map_err(|e| e.to_string())?
                .ndcg;
            if v != 1.0 {
                return Err(format!("ranks 1..{k} of {n} gave {v}"));
            }
        }
    }
    let last = ndcg(&RankingReport::from_relevance(&[false, false, false, true]))
        .map_err(|e| e.to_string())?
        .ndcg;
    let expected = 1.0 / 5f64.log2();
    check(
        (last - expected).abs() < 1e-9 && (last - 0.43068).abs() < 1e-5,
        format!("ideal rankings give exactly 1.0; rank 4 of 4 gives {last:.9}"),
    )
}

fn gradient_verification() -> Outcome {
    let start = Instant::now();
    let x = Matrix::from_rows(&[
        vec![1., 0., 1., 0., 0., 1.],
        vec![0., 1., 1., 0., 1., 0.],
        vec![1., 1., 0., 0., 0., 0.],
    ])
    .map_err(|e| e.to_string())?;
    let mut base = ModelConfig::new(Architecture::Ae, 6);
    base.latent_dim = 2;
    base.chunk_size = 3;
    base.seed = 11;
    let mut parts = Vec::new();
    let mut failed = false;
    for arch in Architecture::ALL {
        let config = base.for_architecture(arch);
        let model = TrainedModel::untrained(&config).map_err(|e| e.to_string())?;
        let net = model.network().clone();
        let lambda = config.lambda_or_zero();
        let (_, analytic) = generator_gradient(&net, &x, lambda).map_err(|e| e.to_string())?;
        let mut err = grad_check(&net.generator_flat(), &analytic, 1e-6, |flat| {
            let mut n = net.clone();
            n.assign_generator_flat(flat)?;
            generator_objective(&n, &x, lambda)
        })
        .map_err(|e| e.to_string())?;
        if let Network::Adversarial(adv) = &net {
            let (_, analytic) = discriminator_gradient(adv, &x).map_err(|e| e.to_string())?;
            let d_err = grad_check(
                &aeapt_core::layers::ParamSet::flatten(&adv.discriminator),
                &analytic,
                1e-6,
                |flat| {
                    let mut a = adv.clone();
                    aeapt_core::layers::ParamSet::assign_flat(&mut a.discriminator, flat)?;
                    discriminator_objective(&a, &x)
                },
            )
            .map_err(|e| e.to_string())?;
            err = err.max(d_err);
        }
        failed |= !(err < 1e-3);
        parts.push(format!("{arch} {err:.1e}"));
    }
    let elapsed = start.elapsed();
    check(
        !failed && elapsed < Duration::from_secs(60),
        format!("max rel error: {} ({:.2}s)", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn aae_reduction() -> Outcome {
    let spec = SyntheticSpec {
        normal_count: 400,
        anomaly_count: 4,
        attribute_count: 64,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let (data, _) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut ae = ModelConfig::new(Architecture::Ae, 64);
    ae.epochs = 8;
    ae.seed = 99;
    let mut aae = ae.for_architecture(Architecture::Aae);
    aae.lambda = Some(0.0);
    aae.train_discriminator = false;
    let a = fit(&ae, &data).map_err(|e| e.to_string())?;
    let b = fit(&aae, &data).map_err(|e| e.to_string())?;
    let bits = |m: &TrainedModel| -> Vec<u64> {
        m.loss_trace().iter().map(|p| p.1.to_bits()).collect()
    };
    check(
        bits(&a) == bits(&b),
        format!(
            "{} epochs, final loss AE {:.6} / AAE {:.6}",
            a.loss_trace().len(),
            a.loss_trace().last().unwrap().1,
            b.loss_trace().last().unwrap().1
        ),
    )
}

fn planted_configs() -> Vec<ModelConfig> {
    let mut base = ModelConfig::new(Architecture::Ae, 300);
    base.epochs = 20;
    base.seed = 42;
    Architecture::ALL.iter().map(|&a| base.for_architecture(a)).collect()
}

struct PlantedRun {
    run: EnsembleRun,
    elapsed: Duration,
}

fn planted_run(data: &BooleanDataset, labels: &LabelSet) -> Result<PlantedRun, String> {
    let start = Instant::now();
    let run = run_ensemble(data, labels, &planted_configs()).map_err(|e| e.to_string())?;
    Ok(PlantedRun {
        run,
        elapsed: start.elapsed(),
    })
}

fn planted_anomalies(first: &PlantedRun, data: &BooleanDataset, labels: &LabelSet) -> Outcome {
    let avf_start = Instant::now();
    let avf = avf_ranking(data, labels)
        .and_then(|r| ndcg(&r))
        .map_err(|e| e.to_string())?
        .ndcg;
    let total = first.elapsed + avf_start.elapsed();
    let r = &first.run.result;
    let mut parts = Vec::new();
    let mut ok = true;
    for o in &r.outcomes {
        let v = o.ndcg().unwrap_or(f64::NAN);
        ok &= v >= 0.85;
        parts.push(format!("{} {v:.4}", o.architecture));
    }
    ok &= r.winner_ndcg >= 0.90 && avf >= 0.80 && total < Duration::from_secs(300);
    check(
        ok,
        format!(
            "{}; winner {} {:.4}; AVF {avf:.4}; {:.1}s",
            parts.join(", "),
            r.winner,
            r.winner_ndcg,
            total.as_secs_f64()
        ),
    )
}

fn write_artifacts(run: &PlantedRun, data: &BooleanDataset, labels: &LabelSet, dir: &Path) -> Result<(), String> {
    let report = RunReport::from_ensemble(&run.run.result, &planted_configs(), data, labels)
        .map_err(|e| e.to_string())?;
    emit_report(&report, dir).map_err(|e| e.to_string())?;
    for model in run.run.models.iter().flatten() {
        let bytes = model_to_bytes(model).map_err(|e| e.to_string())?;
        fs::write(dir.join(format!("{}.model", model.architecture())), bytes)
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn determinism(first: &PlantedRun, data: &BooleanDataset, labels: &LabelSet) -> Outcome {
    let second = planted_run(data, labels)?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    write_artifacts(first, data, labels, &a)?;
    write_artifacts(&second, data, labels, &b)?;
    let json = |d: &Path| -> Result<String, String> {
        let text = fs::read_to_string(d.join("results.json")).map_err(|e| e.to_string())?;
        Ok(strip_timing(&text).map_err(|e| e.to_string())?.to_string())
    };
    let same_json = json(&a)? == json(&b)?;
    let mut same_models = true;
    let mut count = 0;
    for arch in Architecture::ALL {
        let name = format!("{arch}.model");
        let x = fs::read(a.join(&name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(&name)).map_err(|e| e.to_string())?;
        same_models &= x == y;
        count += 1;
    }
    check(
        same_json && same_models,
        format!("results.json without timing equal: {same_json}; {count} model files bytewise equal: {same_models}"),
    )
}

fn mock_view(view: View, os: &str, count: usize, shared: &[&str]) -> BooleanDataset {
    let mut attrs: Vec<String> = shared.iter().map(|s| s.to_string()).collect();
    while attrs.len() < count {
        attrs.push(format!("{}-attr-{}", view.code().to_lowercase(), attrs.len()));
    }
    let ids: Vec<String> = (0..5).map(|i| format!("{os}-proc-{i}")).collect();
    let rows = (0..5).map(|i| vec![(i % count) as u32]).collect();
    BooleanDataset::new(ids, attrs, rows, DatasetMeta::new(view, os, "pandex")).unwrap()
}

fn random_dataset(rng: &mut ChaCha8Rng) -> BooleanDataset {
    let n = rng.gen_range(0..40);
    let m = rng.gen_range(1..30);
    let density: f64 = rng.gen_range(0.0..0.6);
    let ids = (0..n).map(|i| format!("proc-{i}-{}", rng.gen::<u16>())).collect();
    let attrs = (0..m).map(|j| format!("EVENT_{j}")).collect();
    let rows = (0..n)
        .map(|_| (0..m as u32).filter(|_| rng.gen_bool(density)).collect())
        .collect();
    BooleanDataset::new(ids, attrs, rows, DatasetMeta::default()).unwrap()
}

fn data_plumbing() -> Outcome {
    let shared = ["/bin/sh"];
    let linux = [24, 154, 40, 81];
    let bsd = [29, 107, 24, 136];
    let mut totals = Vec::new();
    for (os, counts) in [("linux", linux), ("bsd", bsd)] {
        let views: Vec<BooleanDataset> = [View::Event, View::Exec, View::Parent, View::Netflow]
            .iter()
            .zip(counts)
            .map(|(&v, c)| {
                let s: &[&str] = if matches!(v, View::Exec | View::Parent) { &shared } else { &[] };
                mock_view(v, os, c, s)
            })
            .collect();
        let pa = merge_views(&views[0], &views[1], &views[2], &views[3]).map_err(|e| e.to_string())?;
        totals.push(pa.attribute_count());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..100 {
        let d = random_dataset(&mut rng);
        let dense = dir.path().join(format!("d{case}.csv"));
        let sparse = dir.path().join(format!("d{case}.sparse"));
        export_dense_csv(&d, &dense).map_err(|e| e.to_string())?;
        export_sparse(&d, &sparse).map_err(|e| e.to_string())?;
        let a = ingest_dense_csv(&dense, DatasetMeta::default()).map_err(|e| e.to_string())?;
        let b = ingest_sparse(&sparse, DatasetMeta::default()).map_err(|e| e.to_string())?;
        if a != b || a != d {
            return Err(format!("case {case}: dense and sparse ingestion differ"));
        }
    }
    check(
        totals == [299, 296],
        format!("PA widths {} and {}; 100 dense/sparse round trips equal", totals[0], totals[1]),
    )
}

fn avf_hand_case() -> Outcome {
    let d = BooleanDataset::new(
        vec!["r1".into(), "r2".into(), "r3".into()],
        vec!["a".into(), "b".into()],
        vec![vec![0], vec![0], vec![1]],
        DatasetMeta::default(),
    )
    .map_err(|e| e.to_string())?;
    let s = avf_scores(&d).map_err(|e| e.to_string())?;
    let expected = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
    let ok = s.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-9)
        && (s[0] - 0.6667).abs() < 1e-4
        && (s[2] - 0.3333).abs() < 1e-4;
    check(ok, format!("scores {:.4}, {:.4}, {:.4}", s[0], s[1], s[2]))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };

    report("nDCG oracle equivalence", ndcg_oracle_equivalence());
    report("metric point checks", metric_point_checks());
    report("gradient verification", gradient_verification());
    report("AAE reduction", aae_reduction());

    let (data, labels) = generate_synthetic(&SyntheticSpec {
        seed: 7,
        ..SyntheticSpec::default()
    })
    .expect("default synthetic spec is valid");
    match planted_run(&data, &labels) {
        Ok(first) => {
            report("planted-anomaly end-to-end", planted_anomalies(&first, &data, &labels));
            report("determinism", determinism(&first, &data, &labels));
        }
        Err(e) => {
            report("planted-anomaly end-to-end", Err(e.clone()));
            report("determinism", Err(e));
        }
    }

    report("data plumbing", data_plumbing());
    report("AVF hand case", avf_hand_case());

    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
