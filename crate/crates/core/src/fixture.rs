//! Seeded synthetic corpora: detection streams with known actor identities,
//! ground-truth spans and boxes, queries and temporal proposals.
//!
//! Boxes live on a 640x360 canvas. Actors of the same video never collide
//! unless the trajectory kind is `Crossing`, where neighbouring lanes overlap
//! by half a box height so that paths cross without making the tracker
//! ambiguous (self IoU between frames stays well above any cross IoU).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_jsonl, AnnotationRecord, DetectionRecord, FrameRange, TrmSpanRecord, TubeletRecord, VideoMeta};
use crate::model::{BBox, Detection, Frame, QueryRecord, SubActionPhrase};
use crate::slf::Category;

const CANVAS_W: f64 = 640.0;
const CANVAS_H: f64 = 360.0;
const BOX_W: f64 = 60.0;
const BOX_H: f64 = 80.0;
const LANE_SPACING: f64 = 120.0;
const CROSS_LANE_OFFSET: f64 = BOX_H / 2.0;
const CROSS_SPEED: f64 = 8.0;
pub const MAX_ACTORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    Linear,
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub n_videos: usize,
    pub actors_per_video: usize,
    /// Video `i` uses `trajectories[i % len]`.
    pub trajectories: Vec<TrajectoryKind>,
    /// Probability that a detection's label names the opposite category.
    pub label_noise_rate: f64,
    pub seed: u64,
    pub n_frames: u32,
    pub fps_sampled: f64,
    pub embedding_dim: usize,
    /// Uniform per-coordinate box perturbation, in pixels.
    pub box_jitter: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_videos: 3,
            actors_per_video: 2,
            trajectories: vec![TrajectoryKind::Static, TrajectoryKind::Linear, TrajectoryKind::Crossing],
            label_noise_rate: 0.0,
            seed: 1,
            n_frames: 20,
            fps_sampled: 5.0,
            embedding_dim: 8,
            box_jitter: 0.0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("fixture: {m}")));
        if self.actors_per_video == 0 || self.actors_per_video > MAX_ACTORS {
            return fail(format!("actors_per_video must be in 1..={MAX_ACTORS}"));
        }
        if self.trajectories.is_empty() {
            return fail("at least one trajectory kind required".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return fail(format!("label_noise_rate {} outside [0, 1]", self.label_noise_rate));
        }
        if self.n_frames < 3 {
            return fail("n_frames must be >= 3".into());
        }
        if !(self.fps_sampled.is_finite() && self.fps_sampled > 0.0) {
            return fail("fps_sampled must be > 0".into());
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be >= 1".into());
        }
        if !(self.box_jitter.is_finite() && (0.0..BOX_W / 4.0).contains(&self.box_jitter)) {
            return fail(format!("box_jitter must be in [0, {})", BOX_W / 4.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fixture {
    pub detections: Vec<DetectionRecord>,
    pub queries: Vec<QueryRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub meta: Vec<VideoMeta>,
    pub trm_spans: Vec<TrmSpanRecord>,
    /// Every actor's emitted detections, ids `a{k}`.
    pub actors: Vec<TubeletRecord>,
}

impl Fixture {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("detections.jsonl"), &self.detections)?;
        write_jsonl(&dir.join("queries.jsonl"), &self.queries)?;
        write_jsonl(&dir.join("annotations.jsonl"), &self.annotations)?;
        write_jsonl(&dir.join("meta.jsonl"), &self.meta)?;
        write_jsonl(&dir.join("trm_spans.jsonl"), &self.trm_spans)?;
        write_jsonl(&dir.join("actors.jsonl"), &self.actors)
    }
}

const ACTIONS: [&str; 6] = ["walks forward", "turns around", "sits down", "waves", "picks up a bag", "stands up"];

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn word(c: Category) -> &'static str {
    match c {
        Category::Male => "man",
        Category::Female => "woman",
        Category::Neutral => "person",
    }
}

fn flip(c: Category) -> Category {
    match c {
        Category::Male => Category::Female,
        _ => Category::Male,
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct Actor {
    category: Category,
    start: Frame,
    end: Frame,
    /// True box per frame of `start..=end`.
    path: Vec<BBox>,
    embedding: Vec<f64>,
}

fn clamp_box(x: f64, y: f64) -> BBox {
    let x = x.clamp(0.0, CANVAS_W - BOX_W);
    let y = y.clamp(0.0, CANVAS_H - BOX_H);
    BBox::new(round2(x), round2(y), round2(x + BOX_W), round2(y + BOX_H)).expect("canvas box")
}

fn make_actor(rng: &mut ChaCha8Rng, spec: &FixtureSpec, kind: TrajectoryKind, a: usize) -> Actor {
    let n = spec.n_frames;
    let category = if rng.gen_bool(0.5) { Category::Male } else { Category::Female };
    let (start, end) = match kind {
        TrajectoryKind::Crossing => (0, n - 1),
        _ => (rng.gen_range(0..=n / 3), rng.gen_range((2 * n) / 3..n).max(n / 3 + 2).min(n - 1)),
    };
    let lane_x = 20.0 + a as f64 * LANE_SPACING;
    let path = match kind {
        TrajectoryKind::Static => {
            let y = rng.gen_range(20.0..CANVAS_H - BOX_H - 20.0);
            (start..=end).map(|_| clamp_box(lane_x, y)).collect()
        }
        TrajectoryKind::Linear => {
            let vy = rng.gen_range(-3.0..3.0);
            let y0 = CANVAS_H / 2.0 - BOX_H / 2.0;
            (start..=end).map(|f| clamp_box(lane_x, y0 + vy * f64::from(f - start))).collect()
        }
        TrajectoryKind::Crossing => {
            // even lanes move right, odd lanes left; all meet mid-video
            let dir = if a % 2 == 0 { 1.0 } else { -1.0 };
            let travel = CROSS_SPEED * f64::from(n - 1);
            let x0 = CANVAS_W / 2.0 - BOX_W / 2.0 - dir * travel / 2.0;
            let y = 20.0 + a as f64 * CROSS_LANE_OFFSET;
            (0..n).map(|f| clamp_box(x0 + dir * CROSS_SPEED * f64::from(f), y)).collect()
        }
    };
    Actor { category, start, end, path, embedding: unit_vector(rng, spec.embedding_dim) }
}

fn jittered(rng: &mut ChaCha8Rng, b: &BBox, jitter: f64) -> BBox {
    if jitter == 0.0 {
        return *b;
    }
    let mut d = || rng.gen_range(-jitter..=jitter);
    let (x1, y1) = ((b.x1() + d()).max(0.0), (b.y1() + d()).max(0.0));
    let (x2, y2) = (b.x2() + d(), b.y2() + d());
    BBox::new(round2(x1), round2(y1), round2(x2), round2(y2)).expect("jitter below a quarter box keeps boxes valid")
}

fn sub_actions(subject: &str, actions: &[&str]) -> BTreeMap<u32, Vec<SubActionPhrase>> {
    let n = actions.len();
    (1..=n)
        .map(|k| {
            let phrases = (0..=n - k)
                .map(|s| SubActionPhrase {
                    text: format!("{subject} {}", actions[s..s + k].join(" and then ")),
                    action_indices: Some((s as u32 + 1..=(s + k) as u32).collect()),
                })
                .collect();
            (k as u32, phrases)
        })
        .collect()
}

pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut fx = Fixture::default();
    for v in 0..spec.n_videos {
        let video_id = format!("vid{v:03}");
        let kind = spec.trajectories[v % spec.trajectories.len()];
        let actors: Vec<Actor> = (0..spec.actors_per_video).map(|a| make_actor(&mut rng, spec, kind, a)).collect();

        let mut emitted: Vec<Vec<Detection>> = vec![Vec::new(); actors.len()];
        for frame in 0..spec.n_frames {
            let mut in_frame = Vec::new();
            for (a, actor) in actors.iter().enumerate() {
                if frame < actor.start || frame > actor.end {
                    continue;
                }
                let truth = actor.path[(frame - actor.start) as usize];
                let category = if rng.gen_bool(spec.label_noise_rate) { flip(actor.category) } else { actor.category };
                let embedding: Vec<f64> =
                    actor.embedding.iter().map(|x| (1e4 * (x + rng.gen_range(-0.1..0.1))).round() / 1e4).collect();
                let det = Detection::new(
                    frame,
                    jittered(&mut rng, &truth, spec.box_jitter),
                    round2(rng.gen_range(0.5..0.99)),
                    vec!["person".into(), word(category).into()],
                )?
                .with_embedding(embedding)?;
                emitted[a].push(det.clone());
                in_frame.push(det);
            }
            in_frame.shuffle(&mut rng);
            fx.detections
                .extend(in_frame.into_iter().map(|detection| DetectionRecord { video_id: video_id.clone(), detection }));
        }
        for (a, dets) in emitted.into_iter().enumerate() {
            fx.actors.push(TubeletRecord {
                video_id: video_id.clone(),
                id: format!("a{a}"),
                fps_sampled: spec.fps_sampled,
                detections: dets,
            });
        }

        // actor 0 is the query target
        let target = &actors[0];
        let len = target.end - target.start + 1;
        let gt_start = target.start + rng.gen_range(0..=len / 4);
        let gt_end = target.end - rng.gen_range(0..=len / 4);
        let boxes = (gt_start..=gt_end).map(|f| (f, target.path[(f - target.start) as usize])).collect();
        fx.annotations.push(AnnotationRecord {
            video_id: video_id.clone(),
            span: FrameRange { start: gt_start, end: gt_end },
            boxes,
        });
        let last = spec.n_frames - 1;
        let shift = |rng: &mut ChaCha8Rng, f: Frame| (i64::from(f) + rng.gen_range(-2..=2)).clamp(0, i64::from(last)) as Frame;
        let (s, e) = (shift(&mut rng, gt_start), shift(&mut rng, gt_end));
        fx.trm_spans.push(TrmSpanRecord { video_id: video_id.clone(), start: s.min(e), end: s.max(e) });

        let n_actions = rng.gen_range(2..=4);
        let mut pool = ACTIONS.to_vec();
        pool.shuffle(&mut rng);
        let actions = &pool[..n_actions];
        let interrogative = rng.gen_bool(0.5);
        let subject = format!("The {}", word(target.category));
        let caption = if interrogative {
            format!("Who {}?", actions.join(" and then "))
        } else {
            format!("{subject} {}.", actions.join(" and then "))
        };
        fx.queries.push(QueryRecord {
            video_id: video_id.clone(),
            caption,
            subject_phrase: subject.clone(),
            sub_actions: sub_actions(&subject, actions),
            query_embedding: Some(target.embedding.iter().map(|x| (1e4 * x).round() / 1e4).collect()),
            tag: Some(if interrogative { "interrogative" } else { "declarative" }.into()),
        });
        fx.meta.push(VideoMeta {
            video_id,
            fps_sampled: Some(spec.fps_sampled),
            fps_raw: None,
            num_frames: Some(spec.n_frames),
        });
    }
    Ok(fx)
}
