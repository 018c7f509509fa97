use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use planseq_core::dataset::{build_dataset, decode, read_records, write_records, Token};
use planseq_core::distmap::{distance_for_segments, error_stats, predict_distance, ErrorReport};
use planseq_core::geometry::{canonicalize, flatten_plan, plan_from_json, plan_to_json};
use planseq_core::infer::{
    dyad_stats, evaluate, sample_sequence, uniform_metrics, ModelPredictor, NearestNeighbors, Predictor,
    UniformPredictor,
};
use planseq_core::model::{train, TrainEvent};
use planseq_core::nn::checkpoint::write_atomic;
use planseq_core::nn::Checkpoint;
use planseq_core::raster::rasterize;
use planseq_core::rng::{derive_seed, substream};
use planseq_core::{DatasetRecord, FloorPlan, Model, Point, Quantizer, TokenSequence, Vocab};

use crate::config::RunConfig;
use crate::svg::render_svg;
use crate::{Baseline, Command, Common};

/// Nearest-neighbor baseline: window length and neighbor count.
const NN_WINDOW: usize = 10;
const NN_NEIGHBORS: usize = 32;

pub(crate) fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { inputs, common } => ingest(&inputs, &common),
        Command::Dataset { archive, common } => dataset(&archive, &common),
        Command::Train { records, context, common } => {
            let cfg = prepare(&common, |c| {
                if let Some(k) = context {
                    c.model.context = k.into();
                }
            })?;
            train_cmd(&records, &cfg, &common.out)
        }
        Command::Eval { records, checkpoint, baseline, train, common } => {
            let cfg = prepare(&common, |_| {})?;
            eval_cmd(&records, checkpoint.as_deref(), baseline, train.as_deref(), &cfg, &common)
        }
        Command::Sample { checkpoint, records, prefix_segments, count, top_p, common } => {
            let cfg = prepare(&common, |c| {
                if let Some(p) = top_p {
                    c.sampler.top_p = p;
                }
            })?;
            sample_cmd(&checkpoint, records.as_deref(), prefix_segments, count, &cfg, &common)
        }
        Command::Distmap { checkpoint, archive, records, count, k_completions, top_p, common } => {
            let cfg = prepare(&common, |c| {
                if let Some(k) = k_completions {
                    c.distmap.k_completions = k;
                }
                if let Some(p) = top_p {
                    c.sampler.top_p = p;
                }
            })?;
            distmap_cmd(&checkpoint, &archive, &records, count, &cfg, &common)
        }
        Command::Render { input, common } => {
            let cfg = prepare(&common, |_| {})?;
            render_cmd(&input, &cfg, &common.out)
        }
    }
}

fn prepare(common: &Common, overrides: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.rng_seed = s;
    }
    overrides(&mut cfg);
    let cfg = cfg.seeded();
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn load_records(path: &Path, q: &Quantizer) -> Result<Vec<DatasetRecord>> {
    read_records(open(path)?, q).with_context(|| format!("reading records {}", path.display()))
}

fn json_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "json"));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Plans of an archive written by `ingest`, one document per line.
pub(crate) fn read_archive(path: &Path) -> Result<Vec<FloorPlan>> {
    let mut plans = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        plans.push(plan_from_json(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?);
    }
    Ok(plans)
}

fn ingest(inputs: &[PathBuf], common: &Common) -> Result<()> {
    let mut plans: BTreeMap<(String, String), (FloorPlan, PathBuf)> = BTreeMap::new();
    for file in json_files(inputs)? {
        let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let plan = plan_from_json(&text).with_context(|| format!("{}", file.display()))?;
        let n = flatten_plan(&plan).with_context(|| format!("{}", file.display()))?.len();
        info!("{}: {}/{}: {} spaces, {} segments", file.display(), plan.building_id, plan.floor_id, plan.spaces.len(), n);
        let key = (plan.building_id.clone(), plan.floor_id.clone());
        if let Some((_, first)) = plans.get(&key) {
            bail!("duplicate plan {}/{} in {} and {}", key.0, key.1, first.display(), file.display());
        }
        plans.insert(key, (plan, file));
    }
    if plans.is_empty() {
        bail!("no plan files found");
    }
    let mut out = create(&common.out.join("plans.jsonl"))?;
    for (plan, _) in plans.values() {
        writeln!(out, "{}", plan_to_json(plan)?)?;
    }
    out.flush()?;
    info!("wrote {} plans", plans.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub rng_seed: u64,
    pub test_fraction: f64,
    pub train_records: usize,
    pub test_records: usize,
    pub train_buildings: Vec<String>,
    pub test_buildings: Vec<String>,
}

fn buildings(records: &[DatasetRecord]) -> Vec<String> {
    let mut b: Vec<String> = records.iter().map(|r| r.building_id.clone()).collect();
    b.sort();
    b.dedup();
    b
}

fn dataset(archive: &Path, common: &Common) -> Result<()> {
    let cfg = prepare(common, |_| {})?;
    let plans = read_archive(archive)?;
    if plans.is_empty() {
        bail!("archive {} holds no plans", archive.display());
    }
    let (train, test) = build_dataset(&plans, &cfg.canon, &cfg.view, &cfg.sample, &cfg.quantizer, cfg.test_fraction)?;
    for (name, recs) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        let mut w = create(&common.out.join(name))?;
        write_records(&mut w, recs)?;
        w.flush()?;
    }
    let manifest = Manifest {
        rng_seed: cfg.rng_seed,
        test_fraction: cfg.test_fraction,
        train_records: train.len(),
        test_records: test.len(),
        train_buildings: buildings(&train),
        test_buildings: buildings(&test),
    };
    write_file(&common.out.join("manifest.json"), to_json_pretty(&manifest)?)?;
    info!("{} train records, {} test records", train.len(), test.len());
    Ok(())
}

fn train_cmd(records: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let recs = load_records(records, &cfg.quantizer)?;
    let mut model = Model::new(cfg.model.clone(), cfg.init_seed())?;
    write_file(&out.join("config.json"), to_json_pretty(cfg)?)?;
    let mut metrics = create(&out.join("metrics.csv"))?;
    writeln!(metrics, "step,nll_bits")?;
    let ckpt_dir = out.join("checkpoints");
    train(&mut model, &recs, &cfg.quantizer, &cfg.train, |ev| {
        match ev {
            TrainEvent::Metrics(row) => {
                info!("step {} nll {:.4} bits/token", row.step, row.nll_bits);
                writeln!(metrics, "{},{}", row.step, row.nll_bits)?;
                metrics.flush()?;
            }
            TrainEvent::Checkpoint { step, model } => {
                fs::create_dir_all(&ckpt_dir)?;
                write_atomic(&ckpt_dir.join(format!("step_{step:08}.ckpt")), &model.checkpoint().to_bytes())?;
            }
        }
        Ok(())
    })?;
    write_atomic(&out.join("model.ckpt"), &model.checkpoint().to_bytes())?;
    info!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

/// Loads a checkpoint. With an explicit config the model is built from it
/// and every tensor must match; otherwise the stored config is used.
fn load_model(path: &Path, cfg: &RunConfig, explicit_config: bool) -> Result<Model> {
    let ckpt = Checkpoint::read(open(path)?).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let model = if explicit_config {
        let mut m = Model::new(cfg.model.clone(), 0)?;
        ckpt.load_into(&mut m.params).with_context(|| format!("checkpoint {} does not fit the config", path.display()))?;
        m
    } else {
        Model::from_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", path.display()))?
    };
    if model.config.n_q != cfg.quantizer.n_q {
        bail!("checkpoint expects {} bins, quantizer has {}", model.config.n_q, cfg.quantizer.n_q);
    }
    Ok(model)
}

fn eval_cmd(
    records: &Path,
    checkpoint: Option<&Path>,
    baseline: Option<Baseline>,
    train_path: Option<&Path>,
    cfg: &RunConfig,
    common: &Common,
) -> Result<()> {
    let recs = load_records(records, &cfg.quantizer)?;
    let vocab = Vocab::new(cfg.quantizer.n_q);
    let model;
    let nn;
    let predictor: Box<dyn Predictor + '_> = match (checkpoint, baseline) {
        (Some(p), _) => {
            model = load_model(p, cfg, common.config.is_some())?;
            Box::new(ModelPredictor { model: &model, quantizer: cfg.quantizer })
        }
        (None, Some(Baseline::Uniform)) => Box::new(UniformPredictor { vocab }),
        (None, Some(Baseline::Nn)) => {
            let path = train_path.context("the nn baseline needs --train")?;
            nn = NearestNeighbors::new(&load_records(path, &cfg.quantizer)?, NN_WINDOW, NN_NEIGHBORS)?;
            Box::new(nn)
        }
        (None, None) => bail!("pass --checkpoint or --baseline"),
    };
    let report = if recs.is_empty() && matches!(baseline, Some(Baseline::Uniform)) {
        uniform_metrics(&vocab)
    } else {
        evaluate(predictor.as_ref(), &recs)?
    };
    write_file(&common.out.join("eval.json"), to_json_pretty(&report)?)?;
    // Rankings carry no probabilities, so the nearest-neighbor baseline has no dyad table.
    if !matches!(baseline, Some(Baseline::Nn)) {
        write_file(&common.out.join("dyad.csv"), dyad_stats(predictor.as_ref(), &recs)?.to_csv())?;
    }
    info!(
        "nll {} bits/token, top-1 {:.2}%, top-5 {:.2}% over {} tokens",
        report.nll_bits_per_token.map_or("n/a".into(), |v| format!("{v:.4}")),
        100.0 * report.top1_accuracy,
        100.0 * report.top5_accuracy,
        report.token_count
    );
    Ok(())
}

/// One line of `samples.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub index: usize,
    pub building: Option<String>,
    pub plan: Option<String>,
    pub prefix_segments: usize,
    pub tokens: Vec<Token>,
}

/// Any JSON line with `tokens`; `prefix_segments` marks the observed part.
#[derive(Debug, Deserialize)]
struct RenderLine {
    tokens: Vec<Token>,
    #[serde(default)]
    prefix_segments: usize,
}

fn render_tokens(tokens: &[Token], prefix_segments: usize, q: &Quantizer) -> Result<String> {
    let seq = TokenSequence::new(tokens.to_vec());
    seq.validate(&Vocab::new(q.n_q))?;
    let segs = decode(&seq, q)?;
    let (observed, generated) = segs.split_at(prefix_segments.min(segs.len()));
    Ok(render_svg(observed, generated))
}

fn sample_cmd(
    checkpoint: &Path,
    records: Option<&Path>,
    prefix_segments: usize,
    count: usize,
    cfg: &RunConfig,
    common: &Common,
) -> Result<()> {
    let model = load_model(checkpoint, cfg, common.config.is_some())?;
    let q = &cfg.quantizer;
    let recs = match records {
        Some(p) => load_records(p, q)?,
        None => Vec::new(),
    };
    if prefix_segments > 0 && recs.is_empty() {
        bail!("--prefix-segments needs a non-empty --records file");
    }
    let mut lines = create(&common.out.join("samples.jsonl"))?;
    for i in 0..count {
        let (rec, prefix) = if prefix_segments > 0 {
            let pick = substream(cfg.rng_seed, "pick", i as u64).random_range(0..recs.len());
            let r = &recs[pick];
            (Some(r), r.tokens.segment_prefix(prefix_segments))
        } else {
            (None, TokenSequence::new(Vec::new()))
        };
        let image = model
            .config
            .has_context()
            .then(|| decode(&prefix, q).map(|s| rasterize(&s, model.config.grid, model.config.n_raster)))
            .transpose()?;
        let sc = planseq_core::infer::SamplerConfig {
            rng_seed: derive_seed(cfg.sampler.rng_seed, "sample", i as u64),
            ..cfg.sampler.clone()
        };
        let seq = sample_sequence(&model, &prefix, image.as_ref(), &sc)?;
        let line = SampleLine {
            index: i,
            building: rec.map(|r| r.building_id.clone()),
            plan: rec.map(|r| r.plan_id.clone()),
            prefix_segments: prefix.segment_count(),
            tokens: seq.tokens.clone(),
        };
        serde_json::to_writer(&mut lines, &line)?;
        lines.write_all(b"\n")?;
        let svg = render_tokens(&seq.tokens, line.prefix_segments, q)?;
        write_file(&common.out.join(format!("sample_{i:04}.svg")), svg)?;
        info!("sample {i}: {} segments", seq.segment_count());
    }
    lines.flush()?;
    Ok(())
}

fn render_cmd(input: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut n = 0;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{}: line {}", input.display(), i + 1);
        let rl: RenderLine = serde_json::from_str(&line).with_context(where_)?;
        let svg = render_tokens(&rl.tokens, rl.prefix_segments, &cfg.quantizer).with_context(where_)?;
        write_file(&out.join(format!("render_{n:04}.svg")), svg)?;
        n += 1;
    }
    info!("rendered {n} figures");
    Ok(())
}

#[derive(Debug, Serialize)]
struct SceneStats {
    index: usize,
    record: usize,
    building: String,
    plan: String,
    viewpoint: Point,
    report: ErrorReport,
}

fn distmap_cmd(
    checkpoint: &Path,
    archive: &Path,
    records: &Path,
    count: usize,
    cfg: &RunConfig,
    common: &Common,
) -> Result<()> {
    let model = load_model(checkpoint, cfg, common.config.is_some())?;
    let q = &cfg.quantizer;
    let plans: BTreeMap<(String, String), FloorPlan> = read_archive(archive)?
        .into_iter()
        .map(|p| ((p.building_id.clone(), p.floor_id.clone()), p))
        .collect();
    let recs = load_records(records, q)?;
    if recs.is_empty() {
        bail!("no records in {}", records.display());
    }
    let mut canon_cache: BTreeMap<(String, String), Vec<planseq_core::Segment>> = BTreeMap::new();
    let mut all = Vec::new();
    let dcfg = &cfg.distmap;
    for i in 0..count {
        let ri = substream(cfg.rng_seed, "scene", i as u64).random_range(0..recs.len());
        let rec = &recs[ri];
        let key = (rec.building_id.clone(), rec.plan_id.clone());
        let plan = plans.get(&key).with_context(|| format!("plan {}/{} not in archive", key.0, key.1))?;
        let canon = match canon_cache.get(&key) {
            Some(c) => c.clone(),
            None => {
                let c = canonicalize(plan, &cfg.canon)?;
                canon_cache.insert(key.clone(), c.clone());
                c
            }
        };
        let observed = &rec.local_segments[..rec.local_segments.len().min(dcfg.n_observed)];
        // Observed segments are bin centers; include them so the true map
        // contains every observed obstacle.
        let shift = rec.viewpoint.scale(-1.0);
        let mut truth: Vec<_> = canon.iter().map(|s| s.translate(shift)).collect();
        truth.extend_from_slice(observed);
        let d_true = distance_for_segments(&truth, dcfg)?;
        let d_null = distance_for_segments(observed, dcfg)?;
        let sampler = planseq_core::infer::SamplerConfig {
            rng_seed: derive_seed(cfg.sampler.rng_seed, "scene", i as u64),
            ..cfg.sampler.clone()
        };
        let pred = predict_distance(&model, &rec.local_segments, q, dcfg, &sampler)?;
        let report = error_stats(&pred.median, &d_null, &d_true)?;
        let dir = common.out.join(format!("scene_{i:03}"));
        for (name, g) in [("true", &d_true), ("null", &d_null), ("pred", &pred.median)] {
            write_file(&dir.join(format!("{name}.csv")), g.to_csv())?;
            write_file(&dir.join(format!("{name}.pgm")), g.to_pgm())?;
        }
        let mut comp = create(&dir.join("completions.jsonl"))?;
        for (k, seq) in pred.completions.iter().enumerate() {
            let line = SampleLine {
                index: k,
                building: Some(rec.building_id.clone()),
                plan: Some(rec.plan_id.clone()),
                prefix_segments: observed.len(),
                tokens: seq.tokens.clone(),
            };
            serde_json::to_writer(&mut comp, &line)?;
            comp.write_all(b"\n")?;
        }
        comp.flush()?;
        if report.prediction.evaluated_cells == 0 {
            warn!("scene {i}: no cells to evaluate");
        }
        info!(
            "scene {i} ({}/{}): mean error pred {:?}, null {:?}",
            rec.building_id, rec.plan_id, report.prediction.mean_error, report.null.mean_error
        );
        all.push(SceneStats {
            index: i,
            record: ri,
            building: rec.building_id.clone(),
            plan: rec.plan_id.clone(),
            viewpoint: rec.viewpoint,
            report,
        });
    }
    write_file(&common.out.join("stats.json"), to_json_pretty(&all)?)?;
    Ok(())
}
