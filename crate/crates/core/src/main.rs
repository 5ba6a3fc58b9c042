use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tubelet_grounding::config::{PipelineConfig, WORKERS_ENV};
use tubelet_grounding::curriculum::{cgs_stage_assignment, congestion, satcl_stage_assignment, CongestionRecord, Direction};
use tubelet_grounding::denoise::{denoise_tubelets, DenoiseStrategy};
use tubelet_grounding::eval::{
    shift_classify, shift_report, tiou_metric, upper_bound_detection, upper_bound_tubelet, viou_metric, EvalResult,
    SampleEval, TrimSide, UpperBoundMode,
};
use tubelet_grounding::fixture::{generate_fixture, FixtureSpec, TrajectoryKind};
use tubelet_grounding::grounding::{ground, InferenceMode, ScorerKind};
use tubelet_grounding::io::{
    read_detections, read_jsonl, read_meta, read_queries, read_tubelets, tubelet_records, write_json, write_jsonl,
    AnnotationRecord, PredictionRecord, ShiftLine, TrmSpanRecord, UpperBoundRecord,
};
use tubelet_grounding::pipeline::{run_to_dir, PipelineInputs};
use tubelet_grounding::slf::{slf_filter, Category, CategoryLexicon};
use tubelet_grounding::tracking::link_detections;
use tubelet_grounding::{Detection, Error, Frame, QueryRecord, Result, TemporalSpan};

#[derive(Parser)]
#[command(name = "tubeground", version, about = "Tubelet grounding pipeline stages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Every pipeline parameter; flags override the config file, which
/// overrides the built-in defaults.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    detection_stride: Option<u32>,
    #[arg(long)]
    confidence_floor: Option<f64>,
    #[arg(long)]
    iou_min: Option<f64>,
    #[arg(long)]
    max_gap: Option<u32>,
    #[arg(long)]
    min_track_len: Option<usize>,
    #[arg(long, value_enum)]
    denoise_strategy: Option<StrategyArg>,
    #[arg(long)]
    min_duration_s: Option<f64>,
    #[arg(long)]
    slf_enabled: Option<bool>,
    #[arg(long)]
    variability_min: Option<f64>,
    #[arg(long)]
    slf_at_inference: Option<bool>,
    #[arg(long)]
    cgs_stages: Option<usize>,
    #[arg(long)]
    cgs_delta: Option<f64>,
    #[arg(long, value_enum)]
    cgs_direction: Option<DirectionArg>,
    #[arg(long)]
    cgs_cumulative: Option<bool>,
    #[arg(long)]
    cgs_after_slf: Option<bool>,
    #[arg(long)]
    satcl_stages: Option<usize>,
    #[arg(long)]
    satcl_cumulative: Option<bool>,
    #[arg(long)]
    t_filt: Option<f64>,
    #[arg(long, value_enum)]
    inference_mode: Option<ModeArg>,
    #[arg(long)]
    fill_stride: Option<u32>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    #[arg(long, value_enum)]
    upper_bound_mode: Option<UpperBoundArg>,
    #[arg(long)]
    shift_eps_frames: Option<f64>,
    /// JSON object mapping tokens to male/female/neutral.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = WORKERS_ENV)]
    parallelism: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    None,
    SwitchDropping,
    SwitchAddition,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    HighToLow,
    LowToHigh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    FilterAndTrim,
    FilterOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScorerArg {
    MeanConfidence,
    EmbeddingSim,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UpperBoundArg {
    OwnSpan,
    ClipToGt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    Start,
    End,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrajectoryArg {
    Static,
    Linear,
    Crossing,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field {
                    c.$($target)+ = v.into();
                }
            };
        }
        set!(detection_stride => detection_stride);
        set!(confidence_floor => confidence_floor);
        set!(iou_min => tracker.iou_min);
        set!(max_gap => tracker.max_gap);
        set!(min_track_len => tracker.min_track_len);
        set!(min_duration_s => denoise.min_duration_s);
        set!(slf_enabled => slf.enabled);
        set!(variability_min => slf.variability_min);
        set!(slf_at_inference => slf.at_inference);
        set!(cgs_stages => cgs.n_stages);
        set!(cgs_delta => cgs.delta);
        set!(cgs_cumulative => cgs.cumulative);
        set!(cgs_after_slf => cgs.after_slf);
        set!(satcl_stages => satcl.n_stages);
        set!(satcl_cumulative => satcl.cumulative);
        set!(t_filt => inference.t_filt);
        set!(fill_stride => inference.fill_stride);
        set!(shift_eps_frames => shift_eps_frames);
        set!(parallelism => parallelism);
        if let Some(s) = self.denoise_strategy {
            c.denoise.strategy = match s {
                StrategyArg::None => DenoiseStrategy::None,
                StrategyArg::SwitchDropping => DenoiseStrategy::SwitchDropping,
                StrategyArg::SwitchAddition => DenoiseStrategy::SwitchAddition,
            };
        }
        if let Some(d) = self.cgs_direction {
            c.cgs.direction = match d {
                DirectionArg::HighToLow => Direction::HighToLow,
                DirectionArg::LowToHigh => Direction::LowToHigh,
            };
        }
        if let Some(m) = self.inference_mode {
            c.inference.mode = match m {
                ModeArg::FilterAndTrim => InferenceMode::FilterAndTrim,
                ModeArg::FilterOnly => InferenceMode::FilterOnly,
            };
        }
        if let Some(s) = self.scorer {
            c.scorer = match s {
                ScorerArg::MeanConfidence => ScorerKind::MeanConfidence,
                ScorerArg::EmbeddingSim => ScorerKind::EmbeddingSim,
            };
        }
        if let Some(u) = self.upper_bound_mode {
            c.upper_bound = match u {
                UpperBoundArg::OwnSpan => UpperBoundMode::OwnSpan,
                UpperBoundArg::ClipToGt => UpperBoundMode::ClipToGt,
            };
        }
        if let Some(path) = &self.lexicon {
            let lex = CategoryLexicon::from_json_file(path)?;
            let entries: BTreeMap<String, Category> = lex.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            c.lexicon = Some(entries);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Link per-frame detections into tubelets.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Remove or split soft-label switches in tubelets.
    Denoise {
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Keep tubelets compatible with each query's subject.
    Slf {
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-video congestion (mean pairwise temporal IoU of tubelets).
    Congestion {
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage videos by congestion.
    StageCgs {
        #[arg(long)]
        congestion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stage sub-action phrases by action count.
    StageSatcl {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the staged phrase records here.
        #[arg(long)]
        phrases_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pick one tubelet per query inside its temporal proposal.
    Ground {
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        trm_spans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score predictions against annotations.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        meta: PathBuf,
        /// JSON report; the table is printed to stdout.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Detection- and tubelet-level vIoU upper bounds.
    UpperBound {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        tubelets: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Midpoint shift between full-query and trimmed-query predictions.
    ShiftAnalysis {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        trimmed: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        /// Per-sample records (JSONL); the summary is printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a seeded synthetic corpus.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_videos: usize,
        #[arg(long, default_value_t = 2)]
        actors: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![TrajectoryArg::Static, TrajectoryArg::Linear, TrajectoryArg::Crossing])]
        trajectories: Vec<TrajectoryArg>,
        #[arg(long, default_value_t = 0.0)]
        label_noise_rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_frames: u32,
        #[arg(long, default_value_t = 5.0)]
        fps: f64,
        #[arg(long, default_value_t = 8)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 0.0)]
        box_jitter: f64,
    },
    /// Full pipeline.
    Run {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        trm_spans: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    NoData,
}

fn group_detections(path: &Path, floor: f64) -> Result<BTreeMap<String, BTreeMap<Frame, Vec<Detection>>>> {
    let mut out: BTreeMap<String, BTreeMap<Frame, Vec<Detection>>> = BTreeMap::new();
    for r in read_detections(path)? {
        if r.detection.confidence >= floor {
            out.entry(r.video_id).or_default().entry(r.detection.frame).or_default().push(r.detection);
        }
    }
    Ok(out)
}

fn fps_of(fps: &BTreeMap<String, f64>, video_id: &str, context: &str) -> Result<f64> {
    fps.get(video_id)
        .copied()
        .ok_or_else(|| Error::IdMismatch { id: video_id.to_string(), context: context.to_string() })
}

fn queries_by_id(path: &Path) -> Result<BTreeMap<String, QueryRecord>> {
    Ok(read_queries(path)?.into_iter().map(|q| (q.video_id.clone(), q)).collect())
}

fn load_annotations(
    path: &Path,
    fps: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, tubelet_grounding::GroundTruthAnnotation>> {
    let mut out = BTreeMap::new();
    for a in read_jsonl::<AnnotationRecord>(path)? {
        let f = fps_of(fps, &a.video_id, "annotations (no metadata record)")?;
        out.insert(a.video_id.clone(), a.to_annotation(f)?);
    }
    Ok(out)
}

fn execute(command: Command) -> Result<Status> {
    match command {
        Command::Track { detections, meta, out, cfg } => {
            let c = cfg.resolve()?;
            let fps = read_meta(&meta, c.detection_stride)?;
            let grouped = group_detections(&detections, c.confidence_floor)?;
            let mut tubelets = BTreeMap::new();
            for (vid, frames) in &grouped {
                let f = fps_of(&fps, vid, "detections (no metadata record)")?;
                tubelets.insert(vid.clone(), link_detections(frames, &c.tracker, f)?);
            }
            write_jsonl(&out, &tubelet_records(&tubelets))?;
            Ok(if grouped.is_empty() { Status::NoData } else { Status::Ok })
        }
        Command::Denoise { tubelets, out, cfg } => {
            let c = cfg.resolve()?;
            let lex = c.category_lexicon();
            let groups: BTreeMap<_, _> = read_tubelets(&tubelets)?
                .into_iter()
                .map(|(vid, ts)| (vid, denoise_tubelets(&ts, &c.denoise, &lex)))
                .collect();
            write_jsonl(&out, &tubelet_records(&groups))?;
            Ok(Status::Ok)
        }
        Command::Slf { tubelets, queries, out, cfg } => {
            let c = cfg.resolve()?;
            let lex = c.category_lexicon();
            let queries = queries_by_id(&queries)?;
            let mut groups = BTreeMap::new();
            for (vid, ts) in read_tubelets(&tubelets)? {
                let q = queries.get(&vid).ok_or_else(|| Error::IdMismatch {
                    id: vid.clone(),
                    context: "tubelets (no query)".into(),
                })?;
                groups.insert(vid, slf_filter(&ts, &q.subject_phrase, &lex, c.slf.variability_min).kept);
            }
            write_jsonl(&out, &tubelet_records(&groups))?;
            Ok(Status::Ok)
        }
        Command::Congestion { tubelets, out } => {
            let records = read_tubelets(&tubelets)?
                .into_iter()
                .map(|(vid, ts)| {
                    congestion(&ts).map(|c| CongestionRecord { video_id: vid, n_tubelets: ts.len(), congestion: c })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&out, &records)?;
            Ok(Status::Ok)
        }
        Command::StageCgs { congestion, out, cfg } => {
            let c = cfg.resolve()?;
            let mut records: Vec<CongestionRecord> = read_jsonl(&congestion)?;
            records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
            let plan = cgs_stage_assignment(&records, &c.cgs)?;
            log::info!("CGS additional counts per stage: {:?}", plan.additional_counts());
            write_jsonl(&out, &plan.stages)?;
            Ok(Status::Ok)
        }
        Command::StageSatcl { queries, out, phrases_out, cfg } => {
            let c = cfg.resolve()?;
            let plan = satcl_stage_assignment(&read_queries(&queries)?, &c.satcl)?;
            write_jsonl(&out, &plan.plan.stages)?;
            if let Some(p) = phrases_out {
                write_jsonl(&p, &plan.phrases)?;
            }
            Ok(Status::Ok)
        }
        Command::Ground { tubelets, queries, trm_spans, out, cfg } => {
            let c = cfg.resolve()?;
            let tubelets = read_tubelets(&tubelets)?;
            let queries = queries_by_id(&queries)?;
            let mut preds = Vec::new();
            for span in read_jsonl::<TrmSpanRecord>(&trm_spans)? {
                let q = queries.get(&span.video_id).ok_or_else(|| Error::IdMismatch {
                    id: span.video_id.clone(),
                    context: "temporal proposals (no query)".into(),
                })?;
                let Some(ts) = tubelets.get(&span.video_id).filter(|ts| !ts.is_empty()) else {
                    log::warn!("video `{}` has no tubelets; no prediction", span.video_id);
                    continue;
                };
                let proposal = TemporalSpan::new(span.start, span.end, ts[0].fps_sampled())?;
                preds.push(PredictionRecord::from(&ground(q, ts, &proposal, c.scorer, &c.inference)?));
            }
            preds.sort_by(|a, b| a.video_id.cmp(&b.video_id));
            write_jsonl(&out, &preds)?;
            Ok(if preds.is_empty() { Status::NoData } else { Status::Ok })
        }
        Command::Eval { predictions, annotations, queries, meta, out, cfg } => {
            let c = cfg.resolve()?;
            let fps = read_meta(&meta, c.detection_stride)?;
            let gts = load_annotations(&annotations, &fps)?;
            let preds: BTreeMap<String, PredictionRecord> =
                read_jsonl::<PredictionRecord>(&predictions)?.into_iter().map(|p| (p.video_id.clone(), p)).collect();
            let tags: BTreeMap<String, Option<String>> = match &queries {
                Some(p) => queries_by_id(p)?.into_iter().map(|(k, q)| (k, q.tag)).collect(),
                None => BTreeMap::new(),
            };
            if let Some(id) = preds.keys().find(|id| !gts.contains_key(*id)) {
                return Err(Error::IdMismatch { id: id.clone(), context: "predictions (no annotation)".into() });
            }
            let mut samples = Vec::new();
            for (vid, gt) in &gts {
                let (tiou, viou) = match preds.get(vid) {
                    Some(p) => {
                        let span = TemporalSpan::new(p.start, p.end, gt.span().fps_sampled)?;
                        (tiou_metric(&span, &gt.span())?, viou_metric(&span, &p.boxes, gt)?.viou)
                    }
                    None => {
                        log::warn!("no prediction for `{vid}`; scored as 0");
                        (0.0, 0.0)
                    }
                };
                samples.push(SampleEval { video_id: vid.clone(), tag: tags.get(vid).cloned().flatten(), tiou, viou });
            }
            let result = EvalResult::from_samples(samples)?;
            write_json(&out, &result)?;
            print!("{}", result.to_table());
            Ok(Status::Ok)
        }
        Command::UpperBound { detections, tubelets, annotations, meta, out, cfg } => {
            let c = cfg.resolve()?;
            let fps = read_meta(&meta, c.detection_stride)?;
            let gts = load_annotations(&annotations, &fps)?;
            let frames = group_detections(&detections, c.confidence_floor)?;
            let tubelets = read_tubelets(&tubelets)?;
            let empty_frames = BTreeMap::new();
            let mut records = Vec::new();
            for (vid, gt) in &gts {
                let ts = tubelets.get(vid).map(Vec::as_slice).unwrap_or_default();
                let (tubelet_id, tubelet_viou) = if ts.is_empty() {
                    (None, 0.0)
                } else {
                    let (id, v) = upper_bound_tubelet(gt, ts, c.upper_bound)?;
                    (Some(id), v)
                };
                records.push(UpperBoundRecord {
                    video_id: vid.clone(),
                    detection_viou: upper_bound_detection(gt, frames.get(vid).unwrap_or(&empty_frames)),
                    tubelet_id,
                    tubelet_viou,
                });
            }
            write_jsonl(&out, &records)?;
            Ok(Status::Ok)
        }
        Command::ShiftAnalysis { full, trimmed, side, out, cfg } => {
            let c = cfg.resolve()?;
            let side = match side {
                SideArg::Start => TrimSide::Start,
                SideArg::End => TrimSide::End,
            };
            let full: BTreeMap<String, PredictionRecord> =
                read_jsonl::<PredictionRecord>(&full)?.into_iter().map(|p| (p.video_id.clone(), p)).collect();
            let mut lines = Vec::new();
            for t in read_jsonl::<PredictionRecord>(&trimmed)? {
                let f = full.get(&t.video_id).ok_or_else(|| Error::IdMismatch {
                    id: t.video_id.clone(),
                    context: "trimmed predictions (no full-query prediction)".into(),
                })?;
                // the midpoint rule only needs frame indices; the rate is irrelevant
                let fs = TemporalSpan::new(f.start, f.end, 1.0)?;
                let ts = TemporalSpan::new(t.start, t.end, 1.0)?;
                lines.push(ShiftLine { video_id: t.video_id, record: shift_classify(&fs, &ts, side, c.shift_eps_frames) });
            }
            lines.sort_by(|a, b| a.video_id.cmp(&b.video_id));
            let records: Vec<_> = lines.iter().map(|l| l.record).collect();
            let summary = shift_report(&records)?;
            if let Some(p) = out {
                write_jsonl(&p, &lines)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(Status::Ok)
        }
        Command::Fixture {
            out_dir,
            n_videos,
            actors,
            trajectories,
            label_noise_rate,
            seed,
            n_frames,
            fps,
            embedding_dim,
            box_jitter,
        } => {
            let spec = FixtureSpec {
                n_videos,
                actors_per_video: actors,
                trajectories: trajectories
                    .into_iter()
                    .map(|t| match t {
                        TrajectoryArg::Static => TrajectoryKind::Static,
                        TrajectoryArg::Linear => TrajectoryKind::Linear,
                        TrajectoryArg::Crossing => TrajectoryKind::Crossing,
                    })
                    .collect(),
                label_noise_rate,
                seed,
                n_frames,
                fps_sampled: fps,
                embedding_dim,
                box_jitter,
            };
            generate_fixture(&spec)?.write_to(&out_dir)?;
            Ok(Status::Ok)
        }
        Command::Run { detections, queries, meta, trm_spans, annotations, out_dir, cfg } => {
            let c = cfg.resolve()?;
            let inputs = PipelineInputs { detections, queries, meta, trm_spans, annotations };
            let manifest = run_to_dir(&c, &inputs, &out_dir)?;
            if manifest.no_data {
                return Ok(Status::NoData);
            }
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NoData) => {
            eprintln!("error: no detections to process");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
