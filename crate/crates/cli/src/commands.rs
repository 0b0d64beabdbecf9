use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use stvg::data::{load_dataset, save_dataset, Dataset, SplitName, TemporalInterval, Tubelet, TubeletRec};
use stvg::experiment::{
    ablation_ladder, ablation_row, attention_table, detector_comparison, evaluate_predictions, random_baseline,
    render_ladder, verb_attention, PreparedSplit, Prediction,
};
use stvg::metrics::{eval_spatiotemporal, eval_tubelet_detection, EvalReport};
use stvg::proposals::{
    event_intervals, link_tubelets, load_detections, propose_intervals, recall_at_k, save_detections,
    synthesize_detections, FrameDetections, Perturbation, WindowClassifier, WindowExample, WindowProposal,
    DEFAULT_LINK_IOU, DEFAULT_MAX_TUBELETS,
};
use stvg::synth::{build_dataset, SynthProvider};
use stvg::train::train;
use stvg::validator::validate_text;
use stvg::Model;

use crate::config::FileConfig;
use crate::manifest::{sha256_file, write_json, ManifestBuilder};
use crate::report::{assemble, collect_records, AblateRecord, AttnRecord, EvalRecord, RunRecord};
use crate::{
    AblateArgs, AttnStatsArgs, Cli, Command, EvalArgs, GenDataArgs, InvalidInput, LinkArgs, PerturbArgs, ProposeArgs,
    ReportArgs, TrainArgs, ValidateArgs,
};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let manifest = cli.manifest.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(&cfg, a, manifest),
        Command::Train(a) => train_cmd(&cfg, a, manifest),
        Command::Eval(a) => eval(&cfg, a, manifest),
        Command::Ablate(a) => ablate(&cfg, a, manifest),
        Command::AttnStats(a) => attn_stats(&cfg, a, manifest),
        Command::Propose(a) => propose(&cfg, a, manifest),
        Command::Link(a) => link(&cfg, a, manifest),
        Command::Validate(a) => validate(a, manifest),
        Command::Report(a) => report(a, manifest),
    }
}

fn provider(cfg: &FileConfig) -> SynthProvider {
    SynthProvider::new(cfg.feature_seed, &cfg.synth)
}

fn perturbation(cfg: &FileConfig, p: PerturbArgs) -> anyhow::Result<Perturbation> {
    let mut out = cfg.perturbation;
    if let Some(j) = p.jitter {
        out.jitter = j;
    }
    if let Some(d) = p.drop_rate {
        out.drop_rate = d;
    }
    out.validate()?;
    Ok(out)
}

fn dataset(path: &Path, m: &mut ManifestBuilder) -> anyhow::Result<(Dataset, String)> {
    m.input(path);
    let ds = load_dataset(path)?;
    Ok((ds, sha256_file(path)?))
}

fn model(path: &Path, m: &mut ManifestBuilder) -> anyhow::Result<Model> {
    m.input(path);
    Ok(Model::load(path)?)
}

/// Writes lines to `out`, or to standard output.
fn emit_lines(out: Option<&Path>, lines: &[String], m: &mut ManifestBuilder) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    match out {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            m.output(p);
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_record(out: Option<&Path>, record: &RunRecord, m: &mut ManifestBuilder) -> anyhow::Result<()> {
    if let Some(p) = out {
        write_json(p, record)?;
        m.primary_output(p);
    }
    Ok(())
}

fn gen_data(cfg: &FileConfig, a: GenDataArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("gen-data");
    let seed = cfg.resolve_seed(a.seed)?;
    m.seed(seed);
    let ds = build_dataset(a.n, a.preset, &cfg.synth, seed)?;
    save_dataset(&ds, &a.out)?;
    m.output(&a.out);
    let p = perturbation(cfg, a.perturb)?;
    if let Some(dets_out) = &a.dets_out {
        let dets = ds
            .videos
            .iter()
            .map(|v| synthesize_detections(v, &p))
            .collect::<stvg::Result<Vec<_>>>()?;
        save_detections(&dets, dets_out)?;
        m.output(dets_out);
    }
    m.config(serde_json::json!({"preset": a.preset, "n": a.n, "synth": cfg.synth, "perturbation": p}))?;
    println!(
        "{} videos, {} instances -> {}",
        ds.videos.len(),
        ds.instances.len(),
        a.out.display()
    );
    m.finish(target)?;
    Ok(())
}

fn train_cmd(cfg: &FileConfig, a: TrainArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("train");
    let (ds, _) = dataset(&a.data, &mut m)?;
    let mut mc = cfg.model.clone();
    if let Some(v) = a.variant {
        mc.variant = v;
    }
    mc.seed = cfg.resolve_seed(a.seed)?;
    if let Some(e) = a.epochs {
        mc.epochs = e;
    }
    m.seed(mc.seed);
    m.config(serde_json::json!({"model": mc, "feature_seed": cfg.feature_seed, "synth": cfg.synth}))?;
    let (model, log) = train::<f64>(&ds, &provider(cfg), mc)?;
    model.save(&a.out)?;
    m.output(&a.out);
    let log_path = PathBuf::from(format!("{}.log.json", a.out.display()));
    write_json(&log_path, &log)?;
    m.output(&log_path);
    println!(
        "{}: best val accuracy {} at epoch {} -> {}",
        model.config.variant,
        log.best_val_accuracy.map_or("n/a".into(), |x| format!("{:.2}%", 100.0 * x)),
        log.best_epoch,
        a.out.display()
    );
    m.finish(target)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    instance_id: String,
    #[serde(default)]
    predicted_index: Option<usize>,
    #[serde(default)]
    interval: Option<[usize; 2]>,
    #[serde(default)]
    tubelet: Option<TubeletRec>,
    /// Written by `eval --predictions-out`; not needed for scoring.
    #[serde(default, rename = "totals")]
    _totals: Option<Vec<f64>>,
}

enum Loaded {
    Index(Vec<Prediction>),
    Tubelet(Vec<(String, Tubelet)>),
    Spatiotemporal(Vec<(String, TemporalInterval, Tubelet)>),
}

fn read_predictions(path: &Path) -> anyhow::Result<Loaded> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = Vec::new();
    for (k, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| stvg::StvgError::Parse { line: k + 1, message: e.to_string() })?;
        lines.push(p);
    }
    let shape = |p: &PredictionLine| (p.predicted_index.is_some(), p.interval.is_some(), p.tubelet.is_some());
    let Some(first) = lines.first().map(shape) else {
        return Err(InvalidInput(format!("{} holds no predictions", path.display())).into());
    };
    if lines.iter().any(|p| shape(p) != first) {
        return Err(InvalidInput("prediction lines mix different protocols".into()).into());
    }
    let tubelet = |r: TubeletRec| -> anyhow::Result<Tubelet> { Ok(r.into_tubelet()?) };
    Ok(match first {
        (true, false, false) => Loaded::Index(
            lines
                .into_iter()
                .map(|p| Prediction {
                    instance_id: p.instance_id,
                    predicted_index: p.predicted_index.unwrap(),
                    totals: Vec::new(),
                })
                .collect(),
        ),
        (false, false, true) => Loaded::Tubelet(
            lines
                .into_iter()
                .map(|p| Ok((p.instance_id, tubelet(p.tubelet.unwrap())?)))
                .collect::<anyhow::Result<_>>()?,
        ),
        (false, true, true) => Loaded::Spatiotemporal(
            lines
                .into_iter()
                .map(|p| {
                    let [s, e] = p.interval.unwrap();
                    Ok((p.instance_id, TemporalInterval::new(s, e)?, tubelet(p.tubelet.unwrap())?))
                })
                .collect::<anyhow::Result<_>>()?,
        ),
        _ => {
            return Err(InvalidInput(
                "each prediction needs `predicted_index`, `tubelet`, or `interval` with `tubelet`".into(),
            )
            .into())
        }
    })
}

fn lookup<T: Clone>(items: &[(String, T)], instances: &[&stvg::data::GroundingInstance]) -> Vec<Option<T>> {
    let by_id: std::collections::BTreeMap<&str, &T> = items.iter().map(|(id, t)| (id.as_str(), t)).collect();
    instances.iter().map(|i| by_id.get(i.id.as_str()).map(|t| (*t).clone())).collect()
}

fn print_eval(name: &str, split: SplitName, r: &EvalReport, random: Option<f64>) {
    println!("{:<12} {:>6} {:>10} {:>10}", "model", "split", "protocol", "score (%)");
    println!("{name:<12} {:>6} {:>10} {:>10.2}", split.as_str(), r.protocol, 100.0 * r.headline());
    if let Some(b) = random {
        println!("{:<12} {:>6} {:>10} {:>10.2}", "random", split.as_str(), "expected", 100.0 * b);
    }
    for f in &r.flags {
        println!("note: {f}");
    }
}

fn eval(cfg: &FileConfig, a: EvalArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("eval");
    let (ds, hash) = dataset(&a.data, &mut m)?;
    let instances = ds.instances_in(a.split);
    let random = random_baseline(&instances);
    let p = perturbation(cfg, a.perturb)?;
    let record = if let Some(params) = &a.params {
        let model = model(params, &mut m)?;
        let provider = provider(cfg);
        let split = PreparedSplit::new(&model, &provider, &ds, a.split)?;
        let preds = split.predict(&model)?;
        if let Some(out) = &a.predictions_out {
            let lines = preds
                .iter()
                .map(|p| serde_json::to_string(p).map_err(Into::into))
                .collect::<anyhow::Result<Vec<_>>>()?;
            emit_lines(Some(out), &lines, &mut m)?;
        }
        let detector = if a.detector {
            Some(detector_comparison(
                &model,
                &provider,
                &ds,
                a.split,
                &p,
                DEFAULT_LINK_IOU,
                DEFAULT_MAX_TUBELETS,
            )?)
        } else {
            None
        };
        m.seed(model.config.seed);
        EvalRecord {
            name: a.name.clone().unwrap_or_else(|| model.config.variant.to_string()),
            variant: Some(model.config.variant),
            seed: Some(model.config.seed),
            split: a.split,
            dataset_sha256: hash,
            random_baseline: random,
            report: evaluate_predictions(&preds, &split.instances)?,
            detector,
        }
    } else {
        let path = a.predictions.as_ref().expect("clap requires --params or --predictions");
        m.input(path);
        let report = match read_predictions(path)? {
            Loaded::Index(preds) => evaluate_predictions(&preds, &instances)?,
            Loaded::Tubelet(t) => eval_tubelet_detection(&lookup(&t, &instances), &instances, 0.5)?,
            Loaded::Spatiotemporal(st) => {
                let pairs: Vec<(String, (TemporalInterval, Tubelet))> =
                    st.into_iter().map(|(id, i, t)| (id, (i, t))).collect();
                eval_spatiotemporal(&lookup(&pairs, &instances), &instances, 0.5, 0.5)?
            }
        };
        if let Some(s) = a.seed {
            m.seed(s);
        }
        EvalRecord {
            name: a.name.clone().unwrap_or_else(|| "predictions".into()),
            variant: None,
            seed: a.seed,
            split: a.split,
            dataset_sha256: hash,
            random_baseline: random,
            report,
            detector: None,
        }
    };
    print_eval(&record.name, a.split, &record.report, record.random_baseline);
    if let Some(d) = &record.detector {
        println!(
            "tubelet-IoU@0.5: ground truth {:.2}%, detector-style {:.2}% ({:.2} linked tubelets per instance)",
            100.0 * d.ground_truth.headline(),
            100.0 * d.detected.headline(),
            d.mean_detected_candidates
        );
    }
    m.config(serde_json::json!({"split": a.split, "feature_seed": cfg.feature_seed, "synth": cfg.synth, "perturbation": p}))?;
    emit_record(a.out.as_deref(), &RunRecord::Eval(record), &mut m)?;
    m.finish(target)?;
    Ok(())
}

fn ablate(cfg: &FileConfig, a: AblateArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("ablate");
    let (ds, hash) = dataset(&a.data, &mut m)?;
    let model = model(&a.params, &mut m)?;
    let provider = provider(cfg);
    let split = PreparedSplit::new(&model, &provider, &ds, a.split)?;
    let rows = if a.ladder {
        ablation_ladder(&model, &split)?
    } else {
        let full = ablation_row(&model, &split, &[])?;
        if a.disable.is_empty() {
            vec![full]
        } else {
            vec![full, ablation_row(&model, &split, &a.disable)?]
        }
    };
    print!("{}", render_ladder(&rows));
    m.seed(model.config.seed);
    m.config(serde_json::json!({"split": a.split, "disable": a.disable, "ladder": a.ladder, "feature_seed": cfg.feature_seed}))?;
    let record = RunRecord::Ablate(AblateRecord {
        variant: model.config.variant,
        seed: model.config.seed,
        split: a.split,
        dataset_sha256: hash,
        ladder: a.ladder,
        rows,
    });
    emit_record(a.out.as_deref(), &record, &mut m)?;
    m.finish(target)?;
    Ok(())
}

fn attn_stats(cfg: &FileConfig, a: AttnStatsArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("attn-stats");
    let (ds, hash) = dataset(&a.data, &mut m)?;
    let model = model(&a.params, &mut m)?;
    let instances = ds.instances_in(a.split);
    let table = attention_table(&model, &instances)?;
    let verbs = verb_attention(&table);
    print!("{}", table.render());
    if !verbs.pairs.is_empty() {
        println!(
            "verb attention: motion modules {:.4}, appearance counterparts {:.4}",
            verbs.motion_total, verbs.appearance_total
        );
    }
    m.seed(model.config.seed);
    m.config(serde_json::json!({"split": a.split, "feature_seed": cfg.feature_seed}))?;
    let record = RunRecord::AttnStats(AttnRecord {
        variant: model.config.variant,
        seed: model.config.seed,
        split: a.split,
        dataset_sha256: hash,
        table,
        verb_attention: verbs,
    });
    emit_record(a.out.as_deref(), &record, &mut m)?;
    m.finish(target)?;
    Ok(())
}

#[derive(Serialize)]
struct LinkedVideo<'a> {
    video_id: &'a str,
    class: &'a str,
    tubelets: Vec<TubeletRec>,
}

fn linked_lines(dets: &[FrameDetections], link_iou: f64, max: usize) -> anyhow::Result<Vec<String>> {
    dets.iter()
        .map(|d| {
            let rec = LinkedVideo {
                video_id: &d.video_id,
                class: &d.class_label,
                tubelets: link_tubelets(d, link_iou, max).iter().map(TubeletRec::from_tubelet).collect(),
            };
            Ok(serde_json::to_string(&rec)?)
        })
        .collect()
}

#[derive(Serialize)]
struct ProposedVideo<'a> {
    video_id: &'a str,
    events: Vec<TemporalInterval>,
    proposals: Vec<WindowProposal>,
}

fn propose(cfg: &FileConfig, a: ProposeArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("propose");
    if a.top_k == 0 {
        return Err(crate::UsageError("--top-k must be positive".into()).into());
    }
    if let Some(path) = &a.dets {
        m.input(path);
        let dets = load_detections(path)?;
        let lines = linked_lines(&dets, DEFAULT_LINK_IOU, a.top_k)?;
        m.config(serde_json::json!({"top_k": a.top_k, "link_iou": DEFAULT_LINK_IOU}))?;
        emit_lines(a.out.as_deref(), &lines, &mut m)?;
        m.finish(target)?;
        return Ok(());
    }
    let data = a.data.as_ref().expect("clap requires --dets or --data");
    let (ds, _) = dataset(data, &mut m)?;
    let provider = provider(cfg);
    let mut wc = cfg.windows.clone();
    wc.seed = cfg.resolve_seed(a.seed)?;
    m.seed(wc.seed);
    let videos = |s: SplitName| -> Vec<_> { ds.videos_in(s).map(|v| (v, event_intervals(&ds, &v.id))).collect() };
    let train_videos = videos(SplitName::Train);
    let (clf, log) = WindowClassifier::<f64>::fit(&WindowExample::collect(&provider, &train_videos, &wc)?, wc.clone())?;
    let eval_videos = videos(a.split);
    let held_out = WindowExample::collect(&provider, &eval_videos, &wc)?;
    let mut proposals = Vec::new();
    let mut lines = Vec::new();
    for (v, events) in &eval_videos {
        let p = propose_intervals(&clf, &provider, v, a.top_k)?;
        lines.push(serde_json::to_string(&ProposedVideo {
            video_id: &v.id,
            events: events.clone(),
            proposals: p.clone(),
        })?);
        proposals.push(p);
    }
    let events: Vec<_> = eval_videos.iter().map(|(_, e)| e.clone()).collect();
    emit_lines(a.out.as_deref(), &lines, &mut m)?;
    let acc = clf.accuracy(&held_out)?;
    eprintln!(
        "window classifier: {} positive / {} negative training windows, {} accuracy {}; recall@{} at tIoU 0.5: {}",
        log.n_positive,
        log.n_negative,
        a.split,
        acc.map_or("n/a".into(), |x| format!("{:.2}%", 100.0 * x)),
        a.top_k,
        recall_at_k(&proposals, &events, a.top_k, 0.5).map_or("n/a".into(), |x| format!("{:.2}%", 100.0 * x)),
    );
    m.config(serde_json::json!({"top_k": a.top_k, "split": a.split, "windows": wc, "feature_seed": cfg.feature_seed}))?;
    m.finish(target)?;
    Ok(())
}

fn link(cfg: &FileConfig, a: LinkArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("link");
    if !(0.0..=1.0).contains(&a.link_iou) {
        return Err(crate::UsageError(format!("--link-iou must lie in [0, 1], got {}", a.link_iou)).into());
    }
    let p = perturbation(cfg, a.perturb)?;
    let dets = match (&a.dets, &a.data) {
        (Some(path), _) => {
            m.input(path);
            load_detections(path)?
        }
        (None, Some(data)) => {
            let (ds, _) = dataset(data, &mut m)?;
            ds.videos
                .iter()
                .map(|v| synthesize_detections(v, &p))
                .collect::<stvg::Result<Vec<_>>>()?
        }
        (None, None) => unreachable!("clap requires --dets or --data"),
    };
    let lines = linked_lines(&dets, a.link_iou, a.max_tubelets)?;
    m.config(serde_json::json!({"link_iou": a.link_iou, "max_tubelets": a.max_tubelets, "perturbation": p}))?;
    emit_lines(a.out.as_deref(), &lines, &mut m)?;
    m.finish(target)?;
    Ok(())
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    line: usize,
    text: &'a str,
    valid: bool,
    missing: Vec<String>,
}

fn validate(a: ValidateArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("validate");
    let text = if a.input.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        m.input(&a.input);
        std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?
    };
    let mut records = Vec::new();
    let mut invalid = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = validate_text(line);
        let missing: Vec<String> = v.missing.iter().map(|r| r.to_string()).collect();
        if v.valid {
            println!("{}\tvalid\t{line}", k + 1);
        } else {
            invalid += 1;
            println!("{}\tinvalid (missing {})\t{line}", k + 1, missing.join(", "));
        }
        records.push(serde_json::to_string(&VerdictLine {
            line: k + 1,
            text: line,
            valid: v.valid,
            missing,
        })?);
    }
    if let Some(out) = &a.out {
        emit_lines(Some(out), &records, &mut m)?;
    }
    m.finish(target)?;
    if invalid > 0 {
        return Err(InvalidInput(format!("{invalid} of {} expressions are invalid", records.len())).into());
    }
    Ok(())
}

fn report(a: ReportArgs, target: Option<&Path>) -> anyhow::Result<()> {
    let mut m = ManifestBuilder::new("report");
    let records = collect_records(&a.runs)?;
    if records.is_empty() {
        return Err(InvalidInput(format!("no eval, ablate or attn-stats runs under {}", a.runs.display())).into());
    }
    let (rows, text) = assemble(&records);
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
        m.output(out);
        let json_path = PathBuf::from(format!("{}.json", out.display()));
        let records: Vec<&RunRecord> = records.iter().map(|(_, r)| r).collect();
        write_json(&json_path, &serde_json::json!({"comparison": rows, "runs": records}))?;
        m.output(&json_path);
    }
    m.config(serde_json::json!({"runs": a.runs}))?;
    m.finish(target)?;
    Ok(())
}
