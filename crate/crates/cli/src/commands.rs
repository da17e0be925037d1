//! The subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use waydcm_core::choice::{fit_mnl, interpretability_report, ChoiceObservation, FitReport};
use waydcm_core::io::{read_scenes_with, write_scenes};
use waydcm_core::pipeline::fit_scaler;
use waydcm_core::synth::{generate as generate_corpus, meta_path, CorpusMeta};
use waydcm_core::{prepare_scenes, BetaVector, Feature, PipelineConfig, PreparedScene, Scaler, Scene, Variant};
use waydcm_nn::{Checkpoint, Model, SceneInput};
use waydcm_train::compare::RuntimeEntry;
use waydcm_train::evaluate::predict;
use waydcm_train::trainer::write_log_csv;
use waydcm_train::{build_inputs, compare_variants, evaluate, split_indices, EvalMetrics};

use crate::config::{RunConfig, Stamp};
use crate::error::{CliError, CliResult};
use crate::Common;

fn resolved(c: &Common) -> CliResult<RunConfig> {
    RunConfig::load(c.config.as_deref())?.resolve(c.seed)
}

fn out_dir(c: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set paths.out".into()))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn scenes_path(c: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    c.scenes
        .clone()
        .or_else(|| cfg.paths.scenes.clone())
        .ok_or_else(|| CliError::Usage("no scene corpus: pass --scenes or set paths.scenes".into()))
}

fn checkpoint_path(c: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    c.checkpoint
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --checkpoint or set paths.checkpoint".into()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(value).expect("output serializes");
    json.push('\n');
    write(path, json)
}

fn csv_with_stamp(stamp: &Stamp, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = stamp.csv_line().into_bytes();
    body(&mut buf).expect("writing to memory");
    buf
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    #[serde(flatten)]
    body: T,
}

struct Corpus {
    scenes: Vec<Scene>,
    prepared: Vec<PreparedScene>,
    scaler: Scaler,
}

/// Reads and prepares a corpus. The scaler comes from the corpus sidecar when
/// one exists, otherwise from `scaler` or a fit on the corpus itself.
fn load_corpus(path: &Path, pipeline: &PipelineConfig, scaler: Option<Scaler>) -> CliResult<Corpus> {
    let scenes = read_scenes_with(path, &pipeline.limits)?;
    let prepared = prepare_scenes(&scenes, pipeline)?;
    let scaler = match scaler {
        Some(s) => s,
        None => {
            let meta = meta_path(path);
            if meta.exists() {
                CorpusMeta::read(&meta)?.scaler
            } else {
                fit_scaler(&prepared, pipeline.scaling)
            }
        }
    };
    Ok(Corpus {
        scenes,
        prepared,
        scaler,
    })
}

fn require_futures(corpus: &Corpus) -> CliResult<()> {
    match corpus.prepared.iter().find(|p| p.label.is_none()) {
        Some(p) => Err(CliError::Data(format!(
            "scene {} has no future trajectory, so it has no goal label",
            p.id()
        ))),
        None => Ok(()),
    }
}

pub fn generate(c: &Common) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let dir = out_dir(c, &cfg)?;
    let corpus = generate_corpus(&cfg.generator, &cfg.pipeline)?;
    let path = dir.join("corpus.jsonl");
    write_scenes(&corpus.scenes, &path)?;
    corpus
        .meta(&cfg.generator, &cfg.pipeline, &stamp.config_hash)
        .write(meta_path(&path))?;

    let n = corpus.scenes.len();
    let neighbors: usize = corpus.scenes.iter().map(|s| s.neighbors.len()).sum();
    let mut hist = vec![0usize; cfg.pipeline.num_alternatives()];
    for &k in &corpus.labels {
        hist[k] += 1;
    }
    println!("wrote {n} scenes to {}", path.display());
    println!("mean neighbors: {:.3}", if n == 0 { 0.0 } else { neighbors as f64 / n as f64 });
    let cells: Vec<String> = hist.iter().enumerate().map(|(k, c)| format!("{k}:{c}")).collect();
    println!("label histogram: {}", cells.join(" "));
    Ok(())
}

fn observations(corpus: &Corpus) -> CliResult<Vec<ChoiceObservation>> {
    require_futures(corpus)?;
    Ok(corpus
        .prepared
        .iter()
        .map(|p| ChoiceObservation {
            features: corpus.scaler.scale_table(&p.raw),
            choice: p.label.expect("checked"),
        })
        .collect())
}

pub fn fit_dcm(c: &Common) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let variants = match c.variant()? {
        Some(Variant::Lstm) => {
            return Err(CliError::Usage("fit-dcm needs a choice-model variant (TrajDCM, WayDCM1, WayDCM2)".into()))
        }
        Some(v) => vec![v],
        None => vec![Variant::TrajDCM, Variant::WayDCM1, Variant::WayDCM2],
    };
    let corpus = load_corpus(&scenes_path(c, &cfg)?, &cfg.pipeline, None)?;
    let obs = observations(&corpus)?;
    let dir = out_dir(c, &cfg)?;
    let mut rows = Vec::new();
    for v in variants {
        let set = v.feature_set().expect("choice-model variant");
        let report: FitReport = fit_mnl(&obs, set, &BetaVector::default(), &cfg.fit)?;
        if let Some(w) = &report.warning {
            log::warn!("{v}: {w}");
        }
        write_json(&dir.join(format!("fit_{v}.json")), &Stamped { stamp: &stamp, body: &report })?;
        rows.push((v.name().to_string(), set, report.beta));
    }
    let table = interpretability_report(&rows);
    write(&dir.join("beta_table.csv"), csv_with_stamp(&stamp, |w| table.write_csv(w)))?;
    print!("{table}");
    Ok(())
}

pub fn train(c: &Common) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let variant = c.variant()?.unwrap_or(Variant::WayDCM2);
    let corpus = load_corpus(&scenes_path(c, &cfg)?, &cfg.pipeline, None)?;
    require_futures(&corpus)?;
    let dir = out_dir(c, &cfg)?;
    let inputs = build_inputs(&corpus.prepared, &corpus.scaler, variant, &cfg.pipeline, &cfg.model);
    let model = Model::new(variant, cfg.model, cfg.pipeline.num_alternatives(), cfg.pipeline.t_f, cfg.seed);
    let outcome = waydcm_train::train(model, &inputs, &cfg.train)?;
    write(&dir.join("train_log.csv"), csv_with_stamp(&stamp, |w| write_log_csv(&outcome.log, w)))?;
    Checkpoint {
        model: outcome.model,
        scaler: corpus.scaler,
        pipeline: cfg.pipeline,
        config_hash: stamp.config_hash.clone(),
        seed: cfg.seed,
    }
    .save(&dir.join("model"))?;
    let best = &outcome.log[outcome.best_epoch.max(1) - 1];
    println!(
        "{variant}: best epoch {} of {}, val_total {}",
        outcome.best_epoch,
        outcome.log.len(),
        best.val_total
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    variant: Variant,
    checkpoint_config_hash: &'a str,
    metrics: &'a EvalMetrics,
}

pub fn eval(c: &Common) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let ck = Checkpoint::load(&checkpoint_path(c, &cfg)?)?;
    let corpus = load_corpus(&scenes_path(c, &cfg)?, &ck.pipeline, Some(ck.scaler))?;
    require_futures(&corpus)?;
    let dir = out_dir(c, &cfg)?;
    let m = &ck.model;
    let inputs = build_inputs(&corpus.prepared, &corpus.scaler, m.variant, &ck.pipeline, &m.config);
    let metrics = evaluate(m, &inputs);
    write_json(
        &dir.join("metrics.json"),
        &Stamped {
            stamp: &stamp,
            body: EvalOutput {
                variant: m.variant,
                checkpoint_config_hash: &ck.config_hash,
                metrics: &metrics,
            },
        },
    )?;
    println!(
        "{}: {} scenes, minADE_1 {:.4}, minFDE_1 {:.4}, minADE_6 {:.4}, minFDE_6 {:.4}",
        m.variant, metrics.scenes, metrics.min_ade_1, metrics.min_fde_1, metrics.min_ade_6, metrics.min_fde_6
    );
    Ok(())
}

pub fn compare(c: &Common) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let corpus = load_corpus(&scenes_path(c, &cfg)?, &cfg.pipeline, None)?;
    require_futures(&corpus)?;
    let dir = out_dir(c, &cfg)?;
    let (train_idx, test_idx) = split_indices(corpus.prepared.len(), cfg.compare.test_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.prepared[i].clone()).collect::<Vec<_>>();
    let (train_set, test_set) = (pick(&train_idx), pick(&test_idx));
    let result = compare_variants(
        &Variant::ALL,
        &train_set,
        &test_set,
        &corpus.scaler,
        &cfg.pipeline,
        &cfg.model,
        &cfg.train,
        cfg.seed,
    )?;
    write(&dir.join("metrics.csv"), csv_with_stamp(&stamp, |w| result.write_metrics_csv(w)))?;
    #[derive(Serialize)]
    struct Runtimes {
        runtimes: Vec<RuntimeEntry>,
    }
    write_json(
        &dir.join("runtime.json"),
        &Stamped {
            stamp: &stamp,
            body: Runtimes {
                runtimes: result.runtimes(),
            },
        },
    )?;
    for r in &result.variants {
        Checkpoint {
            model: r.outcome.model.clone(),
            scaler: corpus.scaler,
            pipeline: cfg.pipeline,
            config_hash: stamp.config_hash.clone(),
            seed: cfg.seed,
        }
        .save(&dir.join(r.variant.name()))?;
        println!(
            "{:<8} minADE_6 {:.4}  minFDE_6 {:.4}",
            r.variant.name(),
            r.metrics.min_ade_6,
            r.metrics.min_fde_6
        );
    }
    Ok(())
}

pub fn inspect(c: &Common, scene_id: &str) -> CliResult<()> {
    let cfg = resolved(c)?;
    let stamp = Stamp::new(&cfg);
    let ck = Checkpoint::load(&checkpoint_path(c, &cfg)?)?;
    let set = ck
        .model
        .feature_set()
        .ok_or_else(|| CliError::Usage("the LSTM baseline has no goal scores to inspect".into()))?;
    let corpus = load_corpus(&scenes_path(c, &cfg)?, &ck.pipeline, Some(ck.scaler))?;
    let idx = corpus
        .scenes
        .iter()
        .position(|s| s.id == scene_id)
        .ok_or_else(|| CliError::Data(format!("unknown scene id {scene_id:?}")))?;
    let prepared = &corpus.prepared[idx];
    let input = SceneInput::new(prepared, &ck.scaler, Some(set), &ck.pipeline.interaction, &ck.model.config.social);
    let pred = predict(&ck.model, &input);
    let goals = pred
        .goals
        .ok_or_else(|| CliError::Numerical("goal scores are not finite".into()))?;
    let decoded = goals.top(ck.model.config.num_modes);
    let scaled = ck.scaler.scale_table(&prepared.raw);

    let mut csv = stamp.csv_line();
    csv.push_str("k,sector,ring");
    for prefix in ["raw", "std"] {
        for f in Feature::ALL {
            let _ = write!(csv, ",{prefix}_{}", f.name());
        }
    }
    csv.push_str(",u,z,s,p,decoded_rank\n");
    let mut text = format!("scene {scene_id} ({}), label {:?}\n", ck.model.variant, prepared.label);
    let _ = writeln!(
        text,
        "{:>3} {:>6} {:>4} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
        "k", "sector", "ring", "dir", "occ", "coll", "dangle", "ddist", "u", "z", "s", "p"
    );
    for (k, alt) in prepared.grid.alternatives.iter().enumerate() {
        let rank = decoded.iter().position(|&d| d == k);
        let _ = write!(csv, "{k},{},{}", alt.sector, alt.ring);
        for row in [&prepared.raw[k], &scaled[k]] {
            for v in row.0 {
                let _ = write!(csv, ",{v}");
            }
        }
        let (u, z, s, p) = (goals.utilities[k], goals.scores[k] - goals.utilities[k], goals.scores[k], goals.probs[k]);
        let _ = writeln!(csv, ",{u},{z},{s},{p},{}", rank.map_or(String::new(), |r| r.to_string()));
        let raw = prepared.raw[k].0;
        let _ = writeln!(
            text,
            "{k:>3} {:>6} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.2} {u:>10.4} {z:>10.4} {s:>10.4} {p:>8.4}{}",
            alt.sector,
            alt.ring,
            raw[0],
            raw[1],
            raw[2],
            raw[3],
            raw[4],
            rank.map_or(String::new(), |r| format!("  decoded #{r}"))
        );
    }
    print!("{text}");
    if let Some(dir) = c.out.clone().or_else(|| cfg.paths.out.clone()) {
        fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        write(&dir.join(format!("inspect_{scene_id}.csv")), csv)?;
        write(&dir.join(format!("inspect_{scene_id}.txt")), text)?;
    }
    Ok(())
}
