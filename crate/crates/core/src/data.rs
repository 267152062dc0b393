//! Track ingestion, the long-horizon windowing procedure and synthetic scenes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rescale_coords, Point};
use crate::sampling::rng_from_seed;
use crate::scene::{CoordinateSpace, Scene};

/// One agent's positions over consecutive source frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTrack {
    pub scene: String,
    pub agent: String,
    pub class: String,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
}

impl RawTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.positions.len() {
            return Err(Error::Data(format!(
                "track {} has {} frames and {} positions",
                self.agent,
                self.frames.len(),
                self.positions.len()
            )));
        }
        if let Some(w) = self.frames.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "track {} frames not strictly increasing at {} → {}",
                self.agent, w[0], w[1]
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::Data(format!(
                "track {} has a non-finite position at frame {}",
                self.agent, self.frames[i]
            )));
        }
        Ok(())
    }

    fn slice(&self, r: std::ops::Range<usize>) -> RawTrack {
        RawTrack {
            scene: self.scene.clone(),
            agent: self.agent.clone(),
            class: self.class.clone(),
            frames: self.frames[r.clone()].to_vec(),
            positions: self.positions[r].to_vec(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads `scene_id,agent_id,class,frame,x,y` rows, or bounding-box rows
/// with `x_min,y_min,x_max,y_max` reduced to the box center. Tracks come
/// back grouped per (scene, agent) and sorted by frame.
pub fn load_tracks(path: &Path) -> Result<Vec<RawTrack>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tracks(file).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_tracks(reader: impl std::io::Read) -> Result<Vec<RawTrack>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let need = |n: &str| {
        column(&headers, n).ok_or_else(|| Error::Data(format!("missing column {n}")))
    };
    let (ci_scene, ci_agent, ci_class, ci_frame) =
        (need("scene_id")?, need("agent_id")?, need("class")?, need("frame")?);
    let point_cols = match (column(&headers, "x"), column(&headers, "y")) {
        (Some(x), Some(y)) => vec![x, y],
        _ => vec![need("x_min")?, need("y_min")?, need("x_max")?, need("y_max")?],
    };

    type Key = (String, String);
    let mut rows: BTreeMap<Key, (String, Vec<(i64, Point, u64)>)> = BTreeMap::new();
    let mut malformed = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                malformed.push(e.position().map_or(0, |p| p.line()));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let nums: Option<Vec<f64>> = point_cols
            .iter()
            .map(|&c| rec.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        let frame = rec.get(ci_frame).and_then(|v| v.parse::<i64>().ok());
        let (Some(nums), Some(frame), Some(scene), Some(agent), Some(class)) =
            (nums, frame, rec.get(ci_scene), rec.get(ci_agent), rec.get(ci_class))
        else {
            malformed.push(line);
            continue;
        };
        let p = if nums.len() == 2 {
            Point::new(nums[0], nums[1])
        } else {
            Point::new((nums[0] + nums[2]) / 2.0, (nums[1] + nums[3]) / 2.0)
        };
        let entry = rows
            .entry((scene.to_string(), agent.to_string()))
            .or_insert_with(|| (class.to_string(), Vec::new()));
        entry.1.push((frame, p, line));
    }
    if !malformed.is_empty() {
        let shown: Vec<String> = malformed.iter().take(10).map(|l| l.to_string()).collect();
        return Err(Error::Data(format!(
            "{} malformed row(s) at line {}{}",
            malformed.len(),
            shown.join(", "),
            if malformed.len() > 10 { ", ..." } else { "" }
        )));
    }
    let mut out = Vec::with_capacity(rows.len());
    for ((scene, agent), (class, mut pts)) in rows {
        pts.sort_by_key(|r| r.0);
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!(
                "duplicate row for agent {agent} frame {} (lines {} and {})",
                w[0].0, w[0].2, w[1].2
            )));
        }
        out.push(RawTrack {
            scene,
            agent,
            class,
            frames: pts.iter().map(|r| r.0).collect(),
            positions: pts.iter().map(|r| r.1).collect(),
        });
    }
    Ok(out)
}

/// Writes tracks in the point-row CSV format.
pub fn write_tracks(path: &Path, tracks: &[RawTrack]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene_id", "agent_id", "class", "frame", "x", "y"])?;
    for t in tracks {
        for (f, p) in t.frames.iter().zip(&t.positions) {
            w.write_record([
                t.scene.clone(),
                t.agent.clone(),
                t.class.clone(),
                f.to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Why a position did not end up in any window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    /// Dropped by frame-rate reduction.
    FpsDownsample,
    ClassFilter,
    /// Whole track shorter than one window.
    ShortFragment,
    /// Fragment created by a split and shorter than one window.
    DiscontinuityBoundary,
    /// Remainder after tiling.
    Tail,
    /// Window leaves the scene grid.
    OutOfBounds,
}

impl DiscardReason {
    pub const ALL: [DiscardReason; 6] = [
        DiscardReason::FpsDownsample,
        DiscardReason::ClassFilter,
        DiscardReason::ShortFragment,
        DiscardReason::DiscontinuityBoundary,
        DiscardReason::Tail,
        DiscardReason::OutOfBounds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::FpsDownsample => "fps-downsample",
            DiscardReason::ClassFilter => "class-filter",
            DiscardReason::ShortFragment => "short-fragment",
            DiscardReason::DiscontinuityBoundary => "discontinuity-boundary",
            DiscardReason::Tail => "tail",
            DiscardReason::OutOfBounds => "out-of-bounds",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscardEntry {
    pub scene: String,
    pub agent: String,
    pub frame: i64,
    pub reason: DiscardReason,
}

fn discard_all(t: &RawTrack, reason: DiscardReason, log: &mut Vec<DiscardEntry>) {
    log.extend(t.frames.iter().map(|&frame| DiscardEntry {
        scene: t.scene.clone(),
        agent: t.agent.clone(),
        frame,
        reason,
    }));
}

fn check_rates(src_fps: u32, dst_fps: u32) -> Result<u32> {
    if src_fps == 0 || dst_fps == 0 || src_fps % dst_fps != 0 {
        return Err(Error::Config(format!(
            "source rate {src_fps} is not a positive multiple of target rate {dst_fps}"
        )));
    }
    Ok(src_fps / dst_fps)
}

/// Keeps frames with `frame mod (src / dst) = 0`.
pub fn downsample_fps(track: &RawTrack, src_fps: u32, dst_fps: u32) -> Result<RawTrack> {
    downsample_logged(track, src_fps, dst_fps, &mut Vec::new())
}

fn downsample_logged(
    track: &RawTrack,
    src_fps: u32,
    dst_fps: u32,
    log: &mut Vec<DiscardEntry>,
) -> Result<RawTrack> {
    let step = check_rates(src_fps, dst_fps)? as i64;
    let mut out = RawTrack {
        frames: Vec::new(),
        positions: Vec::new(),
        ..track.clone()
    };
    for (&f, &p) in track.frames.iter().zip(&track.positions) {
        if f.rem_euclid(step) == 0 {
            out.frames.push(f);
            out.positions.push(p);
        } else {
            log.push(DiscardEntry {
                scene: track.scene.clone(),
                agent: track.agent.clone(),
                frame: f,
                reason: DiscardReason::FpsDownsample,
            });
        }
    }
    Ok(out)
}

/// Splits wherever consecutive frames are more than `period` apart.
pub fn split_discontinuities(track: &RawTrack, period: i64) -> Vec<RawTrack> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=track.len() {
        if i == track.len() || track.frames[i] - track.frames[i - 1] > period {
            if i > start {
                out.push(track.slice(start..i));
            }
            start = i;
        }
    }
    out
}

/// A fixed-length past/future pair at the target frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub scene: String,
    pub agent: String,
    pub window: usize,
    pub past: Vec<Point>,
    pub future: Vec<Point>,
    /// Source frames of past then future; not persisted.
    #[serde(skip)]
    pub frames: Vec<i64>,
}

/// Preprocessing knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub src_fps: u32,
    pub dst_fps: u32,
    pub n_p: usize,
    pub n_f: usize,
    pub pedestrian_only: bool,
    /// Class labels counted as pedestrians (case-insensitive).
    pub pedestrian_classes: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            src_fps: 30,
            dst_fps: 1,
            n_p: 5,
            n_f: 30,
            pedestrian_only: true,
            pedestrian_classes: vec!["pedestrian".into()],
        }
    }
}

impl PipelineConfig {
    pub fn window_len(&self) -> usize {
        self.n_p + self.n_f
    }

    fn is_pedestrian(&self, class: &str) -> bool {
        self.pedestrian_classes.iter().any(|c| c.eq_ignore_ascii_case(class))
    }
}

/// Fragments are tagged with whether their track was split.
/// Drops non-pedestrians (when flagged) and short fragments, then tiles the
/// rest into non-overlapping windows from the left, discarding the tail.
pub fn filter_and_window(
    fragments: &[(RawTrack, bool)],
    cfg: &PipelineConfig,
    log: &mut Vec<DiscardEntry>,
) -> Vec<WindowedSample> {
    let len = cfg.window_len();
    let mut out = Vec::new();
    let mut counters: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (t, was_split) in fragments {
        if cfg.pedestrian_only && !cfg.is_pedestrian(&t.class) {
            discard_all(t, DiscardReason::ClassFilter, log);
            continue;
        }
        if t.len() < len {
            let reason = if *was_split {
                DiscardReason::DiscontinuityBoundary
            } else {
                DiscardReason::ShortFragment
            };
            discard_all(t, reason, log);
            continue;
        }
        let n_windows = t.len() / len;
        let counter = counters.entry((t.scene.clone(), t.agent.clone())).or_default();
        for k in 0..n_windows {
            let pts = &t.positions[k * len..(k + 1) * len];
            out.push(WindowedSample {
                scene: t.scene.clone(),
                agent: t.agent.clone(),
                window: *counter,
                past: pts[..cfg.n_p].to_vec(),
                future: pts[cfg.n_p..].to_vec(),
                frames: t.frames[k * len..(k + 1) * len].to_vec(),
            });
            *counter += 1;
        }
        discard_all(&t.slice(n_windows * len..t.len()), DiscardReason::Tail, log);
    }
    out
}

/// Output of the full procedure.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub samples: Vec<WindowedSample>,
    pub discards: Vec<DiscardEntry>,
    pub tracks_in: usize,
    pub positions_in: usize,
}

impl PipelineOutput {
    pub fn discard_counts(&self) -> BTreeMap<DiscardReason, usize> {
        let mut m: BTreeMap<DiscardReason, usize> = DiscardReason::ALL.iter().map(|&r| (r, 0)).collect();
        for d in &self.discards {
            *m.entry(d.reason).or_default() += 1;
        }
        m
    }

    /// Positions in windows plus discarded positions.
    pub fn positions_accounted(&self) -> usize {
        self.samples.iter().map(|s| s.past.len() + s.future.len()).sum::<usize>() + self.discards.len()
    }
}

/// Downsample, split, filter and window every track.
pub fn run_pipeline(tracks: &[RawTrack], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let step = check_rates(cfg.src_fps, cfg.dst_fps)? as i64;
    if cfg.n_p == 0 || cfg.n_f == 0 {
        return Err(Error::Config("n_p and n_f must be positive".into()));
    }
    let mut discards = Vec::new();
    let mut fragments = Vec::new();
    for t in tracks {
        t.validate()?;
        let d = downsample_logged(t, cfg.src_fps, cfg.dst_fps, &mut discards)?;
        let parts = split_discontinuities(&d, step);
        let split = parts.len() > 1;
        fragments.extend(parts.into_iter().map(|p| (p, split)));
    }
    let samples = filter_and_window(&fragments, cfg, &mut discards);
    Ok(PipelineOutput {
        samples,
        discards,
        tracks_in: tracks.len(),
        positions_in: tracks.iter().map(|t| t.len()).sum(),
    })
}

/// Converts raw track coordinates (original pixels or world units) to the
/// scene's model-resolution pixel grid.
pub fn to_model_space(points: &[Point], scene: &Scene) -> Result<Vec<Point>> {
    let px = match (scene.coordinates, &scene.homography) {
        (CoordinateSpace::World, Some(h)) => h.world_to_pixel(points),
        (CoordinateSpace::World, None) => {
            return Err(Error::Config(format!(
                "scene {} uses world coordinates but has no homography",
                scene.id
            )))
        }
        (CoordinateSpace::Pixel, _) => points.to_vec(),
    };
    rescale_coords(&px, scene.downsample_factor)
}

/// Moves every window into model space and drops (with a log entry per
/// position) windows that leave the scene grid.
pub fn project_samples(
    samples: Vec<WindowedSample>,
    scene: &Scene,
    log: &mut Vec<DiscardEntry>,
) -> Result<Vec<WindowedSample>> {
    let mut out = Vec::with_capacity(samples.len());
    for mut s in samples {
        s.past = to_model_space(&s.past, scene)?;
        s.future = to_model_space(&s.future, scene)?;
        if s.past.iter().chain(&s.future).all(|p| scene.contains(*p)) {
            out.push(s);
        } else {
            log.extend(s.frames.iter().map(|&frame| DiscardEntry {
                scene: s.scene.clone(),
                agent: s.agent.clone(),
                frame,
                reason: DiscardReason::OutOfBounds,
            }));
        }
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[WindowedSample]) -> Result<()> {
    write_jsonl(path, samples)
}

pub fn read_samples(path: &Path) -> Result<Vec<WindowedSample>> {
    read_jsonl(path)
}

/// One JSON document per line.
pub fn write_jsonl<S: Serialize>(path: &Path, items: &[S]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub fn write_discards(path: &Path, log: &[DiscardEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene", "agent", "frame", "reason"])?;
    for d in log {
        w.write_record([d.scene.as_str(), d.agent.as_str(), &d.frame.to_string(), d.reason.as_str()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Layout of a generated scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Corridor,
    Fork,
    Crossing,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(SceneKind::Corridor),
            "fork" => Ok(SceneKind::Fork),
            "crossing" => Ok(SceneKind::Crossing),
            _ => Err(Error::Config(format!(
                "unknown scene kind {s:?} (corridor, fork or crossing)"
            ))),
        }
    }
}

pub const PAVEMENT: u8 = 0;
pub const TERRAIN: u8 = 1;
pub const STRUCTURE: u8 = 2;
pub const TREE: u8 = 3;
pub const ROAD: u8 = 4;

pub fn class_names() -> Vec<String> {
    ["pavement", "terrain", "structure", "tree", "road"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// A straight walkable strip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    fn dist(&self, p: Point) -> f64 {
        let d = self.b.sub(self.a);
        let t = ((p.sub(self.a).x * d.x + p.sub(self.a).y * d.y) / (d.x * d.x + d.y * d.y)).clamp(0.0, 1.0);
        p.dist(self.a.add(d.scale(t)))
    }

    fn len(&self) -> f64 {
        self.a.dist(self.b)
    }

    fn at(&self, s: f64) -> Point {
        self.a.add(self.b.sub(self.a).scale(s / self.len()))
    }

    fn normal(&self) -> Point {
        let d = self.b.sub(self.a).scale(1.0 / self.len());
        Point::new(-d.y, d.x)
    }
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub kind: SceneKind,
    pub size: usize,
    pub seed: u64,
    pub n_agents: usize,
    /// Frames per track before the agent would leave the grid; `0` walks
    /// until the edge.
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SceneKind::Fork,
            size: 64,
            seed: 0,
            n_agents: 24,
            max_len: 0,
        }
    }
}

/// A generated scene with its agents and corridor geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub tracks: Vec<RawTrack>,
    /// Centerlines of the walkable routes; for forks the stem is first.
    pub routes: Vec<Vec<Segment>>,
    /// Disjoint per-corridor pixel masks (the three branches for forks).
    pub corridor_masks: Vec<Vec<bool>>,
    pub half_width: f64,
    pub junction: Option<Point>,
}

impl SynthScene {
    /// Index of the corridor mask containing `p`, if any.
    pub fn corridor_of(&self, p: Point) -> Option<usize> {
        let (r, c) = p.pixel();
        if r < 0 || c < 0 || r as usize >= self.scene.height || c as usize >= self.scene.width {
            return None;
        }
        let i = r as usize * self.scene.width + c as usize;
        self.corridor_masks.iter().position(|m| m[i])
    }
}

/// Fork branch directions in degrees (image coordinates, y down).
pub const FORK_ANGLES: [f64; 3] = [-55.0, 0.0, 55.0];

/// Generates a scene of `kind` with seeded agents.
pub fn synth_scene(kind: SceneKind, size: usize, seed: u64) -> Result<SynthScene> {
    synth_scene_with(&SynthConfig {
        kind,
        size,
        seed,
        ..SynthConfig::default()
    })
}

pub fn synth_scene_with(cfg: &SynthConfig) -> Result<SynthScene> {
    let s = cfg.size;
    if s == 0 || s % 32 != 0 {
        return Err(Error::Config(format!("scene size {s} is not a positive multiple of 32")));
    }
    let sf = s as f64;
    let hw = (sf / 16.0).max(2.0);
    let (segments, routes, junction): (Vec<Segment>, Vec<Vec<Segment>>, Option<Point>) = match cfg.kind {
        SceneKind::Corridor => {
            let seg = Segment {
                a: Point::new(0.0, sf / 2.0),
                b: Point::new(sf - 1.0, sf / 2.0),
            };
            (vec![seg], vec![vec![seg]], None)
        }
        SceneKind::Crossing => {
            let h = Segment {
                a: Point::new(0.0, sf / 2.0),
                b: Point::new(sf - 1.0, sf / 2.0),
            };
            let v = Segment {
                a: Point::new(sf / 2.0, 0.0),
                b: Point::new(sf / 2.0, sf - 1.0),
            };
            (vec![h, v], vec![vec![h], vec![v]], Some(Point::new(sf / 2.0, sf / 2.0)))
        }
        SceneKind::Fork => {
            let j = Point::new(0.25 * sf, 0.5 * sf);
            let stem = Segment { a: Point::new(0.0, j.y), b: j };
            let branches: Vec<Segment> = FORK_ANGLES
                .iter()
                .map(|deg| {
                    let (sn, cs) = deg.to_radians().sin_cos();
                    Segment {
                        a: j,
                        b: clip_to_grid(j, Point::new(cs, sn), sf),
                    }
                })
                .collect();
            let mut segs = vec![stem];
            segs.extend(&branches);
            let routes = branches.iter().map(|&b| vec![stem, b]).collect();
            (segs, routes, Some(j))
        }
    };

    let mut rng = rng_from_seed(cfg.seed);
    let mut semantic = vec![TERRAIN; s * s];
    let near_any = |p: Point, pad: f64| segments.iter().any(|g| g.dist(p) <= hw + pad);
    // road along the top-left, structures and trees scattered away from paths
    for r in 0..s {
        for c in 0..s {
            let p = Point::new(c as f64, r as f64);
            if c < s / 5 && r < s / 6 && !near_any(p, 1.0) {
                semantic[r * s + c] = ROAD;
            }
        }
    }
    for (class, count, radius) in [(TREE, 4usize, sf / 20.0), (STRUCTURE, 2, sf / 10.0)] {
        for _ in 0..count {
            let cx = rng.random_range(0.0..sf);
            let cy = rng.random_range(0.0..sf);
            for r in 0..s {
                for c in 0..s {
                    let p = Point::new(c as f64, r as f64);
                    let inside = if class == TREE {
                        p.dist(Point::new(cx, cy)) <= radius
                    } else {
                        (p.x - cx).abs() <= radius && (p.y - cy).abs() <= radius * 0.6
                    };
                    if inside && !near_any(p, 1.0) && semantic[r * s + c] == TERRAIN {
                        semantic[r * s + c] = class;
                    }
                }
            }
        }
    }
    for r in 0..s {
        for c in 0..s {
            if near_any(Point::new(c as f64, r as f64), 0.0) {
                semantic[r * s + c] = PAVEMENT;
            }
        }
    }

    let corridor_masks = match cfg.kind {
        SceneKind::Fork => {
            let j = junction.unwrap();
            let branches = &segments[1..];
            (0..3)
                .map(|b| {
                    (0..s * s)
                        .map(|i| {
                            let p = Point::new((i % s) as f64, (i / s) as f64);
                            p.x > j.x
                                && branches[b].dist(p) <= hw
                                && (0..3).filter(|&o| o != b).all(|o| branches[o].dist(p) > hw)
                        })
                        .collect()
                })
                .collect()
        }
        _ => segments
            .iter()
            .enumerate()
            .map(|(k, g)| {
                (0..s * s)
                    .map(|i| {
                        let p = Point::new((i % s) as f64, (i / s) as f64);
                        g.dist(p) <= hw
                            && segments.iter().enumerate().all(|(o, h)| o == k || h.dist(p) > hw)
                    })
                    .collect()
            })
            .collect(),
    };

    let scene = Scene::new(format!("{}-{}", kind_name(cfg.kind), cfg.seed), s, s, semantic, class_names())?;
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut tracks = Vec::with_capacity(cfg.n_agents);
    for a in 0..cfg.n_agents {
        let route = &routes[rng.random_range(0..routes.len())];
        let reverse = cfg.kind != SceneKind::Fork && rng.random_bool(0.5);
        let route: Vec<Segment> = if reverse {
            route.iter().rev().map(|g| Segment { a: g.b, b: g.a }).collect()
        } else {
            route.clone()
        };
        let total: f64 = route.iter().map(|g| g.len()).sum();
        let speed = rng.random_range(1.4..1.5);
        let offset = rng.random_range(-0.3..0.3) * hw;
        let mut arc = rng.random_range(1.0..4.0);
        let mut frames = Vec::new();
        let mut positions = Vec::new();
        let mut t = 0i64;
        while arc <= total && (cfg.max_len == 0 || frames.len() < cfg.max_len) {
            let (mut rem, mut k) = (arc, 0);
            while k + 1 < route.len() && rem > route[k].len() {
                rem -= route[k].len();
                k += 1;
            }
            let center = route[k].at(rem);
            let jitter = Point::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let mut p = center.add(route[k].normal().scale(offset)).add(jitter);
            if !on_pavement(&scene, p) {
                p = center;
            }
            frames.push(t);
            positions.push(p);
            t += 1;
            arc += speed;
        }
        tracks.push(RawTrack {
            scene: scene.id.clone(),
            agent: a.to_string(),
            class: "Pedestrian".into(),
            frames,
            positions,
        });
    }
    Ok(SynthScene {
        scene,
        tracks,
        routes,
        corridor_masks,
        half_width: hw,
        junction,
    })
}

fn kind_name(k: SceneKind) -> &'static str {
    match k {
        SceneKind::Corridor => "corridor",
        SceneKind::Fork => "fork",
        SceneKind::Crossing => "crossing",
    }
}

fn on_pavement(scene: &Scene, p: Point) -> bool {
    let (r, c) = p.pixel();
    scene.contains(p) && scene.class_at(r as usize, c as usize) == PAVEMENT
}

/// Last point inside `[0, size − 1]²` on the ray `from + t·dir`.
fn clip_to_grid(from: Point, dir: Point, size: f64) -> Point {
    let lim = size - 1.0;
    let mut t = f64::INFINITY;
    for (o, d) in [(from.x, dir.x), (from.y, dir.y)] {
        if d > 1e-12 {
            t = t.min((lim - o) / d);
        } else if d < -1e-12 {
            t = t.min(-o / d);
        }
    }
    from.add(dir.scale(t))
}

/// Windows of a generated scene in model space.
pub fn synth_windows(synth: &SynthScene, n_p: usize, n_f: usize) -> Result<Vec<WindowedSample>> {
    let cfg = PipelineConfig {
        src_fps: 1,
        dst_fps: 1,
        n_p,
        n_f,
        ..PipelineConfig::default()
    };
    Ok(run_pipeline(&synth.tracks, &cfg)?.samples)
}

/// Random number helper for tests and fixtures: a point uniformly inside
/// the given corridor mask.
pub fn random_point_in(mask: &[bool], width: usize, rng: &mut impl Rng) -> Option<Point> {
    let cells: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if cells.is_empty() {
        return None;
    }
    let i = cells[rng.random_range(0..cells.len())];
    Some(Point::new((i % width) as f64, (i / width) as f64))
}
