//! Driving a session across a video: seeding at the first annotated frame,
//! forward propagation, and re-initialization from ground truth.
//!
//! A re-initialization clears the session memory and reseeds it with fresh
//! prompts built from the ground truth of the re-initialization frame; earlier
//! prompts are never replayed. Two triggers exist and combine freely:
//!
//! * **interval**: every `T` frames counted from the initial prompt frame. When
//!   the scheduled frame has no annotations, the nearest later annotated frame
//!   is used.
//! * **new object**: an annotated frame contains an object id the session is
//!   not currently tracking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    first_valid_prompt_frame, AnnotatedVideo, DatasetError, GroundTruthKind, InstanceAnnotation,
    ObjectId,
};
use crate::mask::BinaryMask;
use crate::prompt::{build_prompt_set, mask_exit_rate, Prompt, PromptError, PromptStrategy};
use crate::session::{SegmenterSession, SessionError};

#[derive(Debug, thiserror::Error)]
pub enum PropagationError {
    #[error("reinit interval must be positive")]
    ZeroInterval,
    #[error("no annotated frames to schedule from")]
    NoAnnotatedFrames,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed result file: {0}")]
    Format(String),
}

/// When to reseed the session from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ReinitPolicy {
    pub interval: Option<usize>,
    pub new_object_trigger: bool,
}

impl ReinitPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn every(frames: usize) -> Self {
        Self {
            interval: Some(frames),
            new_object_trigger: false,
        }
    }

    pub fn with_new_object_trigger(mut self) -> Self {
        self.new_object_trigger = true;
        self
    }

    /// The policies of the vanilla study, in table order: none, 60, 30.
    pub fn standard_set() -> Vec<Self> {
        vec![Self::none(), Self::every(60), Self::every(30)]
    }

    pub fn is_none(&self) -> bool {
        self.interval.is_none() && !self.new_object_trigger
    }

    /// Table suffix: empty for no re-initialization, otherwise e.g. `Reinit 30`.
    pub fn table_suffix(&self) -> String {
        match (self.interval, self.new_object_trigger) {
            (None, false) => String::new(),
            (Some(t), false) => format!("Reinit {t}"),
            (None, true) => "Reinit NewObj".into(),
            (Some(t), true) => format!("Reinit {t}+NewObj"),
        }
    }
}

impl fmt::Display for ReinitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.interval, self.new_object_trigger) {
            (None, false) => f.write_str("none"),
            (Some(t), false) => write!(f, "reinit-{t}"),
            (None, true) => f.write_str("new-object"),
            (Some(t), true) => write!(f, "reinit-{t}+new-object"),
        }
    }
}

impl FromStr for ReinitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" || s.is_empty() {
            return Ok(Self::none());
        }
        let mut policy = Self::none();
        for part in s.split('+') {
            let part = part.trim();
            if part == "new-object" || part == "newobj" {
                policy.new_object_trigger = true;
            } else if let Some(t) = part
                .strip_prefix("reinit-")
                .or_else(|| part.strip_prefix("reinit "))
                .or_else(|| part.strip_prefix("every-"))
            {
                let t: usize = t.trim().parse().map_err(|_| format!("bad interval in {s:?}"))?;
                if t == 0 {
                    return Err("reinit interval must be positive".into());
                }
                policy.interval = Some(t);
            } else {
                return Err(format!("unknown reinit policy {s:?}"));
            }
        }
        Ok(policy)
    }
}

impl Serialize for ReinitPolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ReinitPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitCause {
    Interval,
    NewObject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReinitEvent {
    pub frame_index: usize,
    pub cause: ReinitCause,
    pub objects_seeded: Vec<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationFailure {
    pub frame_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: String,
    pub strategy: String,
    pub policy: String,
    pub segmenter: String,
    pub seed: u64,
    pub initial_prompt_frame: usize,
    pub reinit_events: Vec<ReinitEvent>,
    /// Number of times the session received a prompt set.
    pub prompt_injections: usize,
    /// Share of positive points that fell outside their object after fluctuation.
    pub mask_exit_rate: Option<f64>,
    pub ground_truth: GroundTruthKind,
}

/// Per-frame masks for every object known to the video, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub frames: BTreeMap<usize, BTreeMap<ObjectId, BinaryMask>>,
    pub provenance: Provenance,
    pub failure: Option<PropagationFailure>,
}

impl SegmentationResult {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Annotated frames `f > anchor` chosen for interval re-initialization, where
/// `anchor` is the first annotated frame. Targets are `anchor + k*T`; each is
/// replaced by the first annotated frame at or after it. Duplicates collapse.
pub fn schedule_interval_reinits(
    annotated_frames: &[usize],
    interval: usize,
) -> Result<Vec<usize>, PropagationError> {
    if interval == 0 {
        return Err(PropagationError::ZeroInterval);
    }
    let mut frames = annotated_frames.to_vec();
    frames.sort_unstable();
    frames.dedup();
    let (Some(&anchor), Some(&last)) = (frames.first(), frames.last()) else {
        return Err(PropagationError::NoAnnotatedFrames);
    };
    let mut out: Vec<usize> = Vec::new();
    let mut target = anchor + interval;
    while target <= last {
        if let Some(&f) = frames.get(frames.partition_point(|&x| x < target)) {
            if out.last() != Some(&f) {
                out.push(f);
            }
            // skip targets that would map onto the same frame again
            target = target.max(f - (f - anchor) % interval) + interval;
        } else {
            break;
        }
    }
    Ok(out)
}

/// Ids annotated on this frame that are not tracked. Disappearance is not a trigger.
pub fn detect_new_objects(
    gt_frame: &[InstanceAnnotation],
    tracked: &BTreeSet<ObjectId>,
) -> BTreeSet<ObjectId> {
    gt_frame
        .iter()
        .map(|a| a.object_id)
        .filter(|id| !tracked.contains(id))
        .collect()
}

/// Clear the session and reseed it from the ground truth of `frame_index`.
/// Returns the event and the prompts that were injected.
pub fn reinitialize<S: SegmenterSession + ?Sized>(
    session: &mut S,
    video: &AnnotatedVideo,
    frame_index: usize,
    strategy: &PromptStrategy,
    cause: ReinitCause,
) -> Result<(ReinitEvent, Vec<Prompt>), PropagationError> {
    let prompts = build_prompt_set(video, frame_index, strategy)?;
    session.reset_memory()?;
    session.add_prompts(frame_index, &prompts)?;
    let objects_seeded = video
        .frame_annotations(frame_index)
        .iter()
        .map(|a| a.object_id)
        .collect();
    Ok((
        ReinitEvent {
            frame_index,
            cause,
            objects_seeded,
        },
        prompts,
    ))
}

/// Seed at the first annotated frame, then propagate frame by frame, applying
/// re-initializations in order. A session failure after seeding ends the run
/// early and is reported in [`SegmentationResult::failure`]; the frames already
/// produced are kept.
pub fn run_sequence<S: SegmenterSession + ?Sized>(
    video: &AnnotatedVideo,
    strategy: &PromptStrategy,
    policy: &ReinitPolicy,
    session: &mut S,
) -> Result<SegmentationResult, PropagationError> {
    let start = first_valid_prompt_frame(video)?;
    let annotated = video.annotated_frames();
    let scheduled: BTreeSet<usize> = match policy.interval {
        Some(t) => schedule_interval_reinits(&annotated, t)?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    let known_objects: BTreeSet<ObjectId> = video.object_classes().keys().copied().collect();
    let (w, h) = video
        .sequence()
        .frame_size()
        .ok_or(PropagationError::NoAnnotatedFrames)?;

    let mut injected: Vec<Prompt> = build_prompt_set(video, start, strategy)?;
    session.add_prompts(start, &injected)?;
    let mut injections = 1usize;
    let mut tracked: BTreeSet<ObjectId> = video
        .frame_annotations(start)
        .iter()
        .map(|a| a.object_id)
        .collect();

    let mut events = Vec::new();
    let mut frames = BTreeMap::new();
    let mut failure = None;
    for t in start..video.sequence().len() {
        if t != start {
            let cause = if scheduled.contains(&t) {
                Some(ReinitCause::Interval)
            } else if policy.new_object_trigger
                && video.is_annotated(t)
                && !detect_new_objects(video.frame_annotations(t), &tracked).is_empty()
            {
                Some(ReinitCause::NewObject)
            } else {
                None
            };
            if let Some(cause) = cause {
                match reinitialize(session, video, t, strategy, cause) {
                    Ok((event, prompts)) => {
                        tracked = event.objects_seeded.iter().copied().collect();
                        injected.extend(prompts);
                        injections += 1;
                        events.push(event);
                    }
                    Err(e) => {
                        failure = Some(PropagationFailure {
                            frame_index: t,
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            }
        }
        match session.propagate(t) {
            Ok(mut masks) => {
                let mut entry = BTreeMap::new();
                for id in known_objects.iter().chain(masks.keys()).copied().collect::<BTreeSet<_>>() {
                    let m = masks.remove(&id).unwrap_or_else(|| BinaryMask::empty(w, h));
                    entry.insert(id, m);
                }
                frames.insert(t, entry);
            }
            Err(e) => {
                failure = Some(PropagationFailure {
                    frame_index: t,
                    message: e.to_string(),
                });
                break;
            }
        }
    }

    Ok(SegmentationResult {
        frames,
        provenance: Provenance {
            video_id: video.video_id().to_string(),
            strategy: strategy.name(),
            policy: policy.to_string(),
            segmenter: session.identity(),
            seed: strategy.point_config.seed,
            initial_prompt_frame: start,
            reinit_events: events,
            prompt_injections: injections,
            mask_exit_rate: mask_exit_rate(&injected, video),
            ground_truth: video.ground_truth_kind(),
        },
        failure,
    })
}

pub fn mask_digest(mask: &BinaryMask) -> String {
    let rle = mask.to_rle();
    let mut h = Sha256::new();
    h.update(rle.width.to_le_bytes());
    h.update(rle.height.to_le_bytes());
    for c in &rle.counts {
        h.update(c.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord<'a> {
    Frame {
        frame_index: usize,
        objects: Vec<(ObjectId, String)>,
    },
    Reinit(&'a ReinitEvent),
    Failure(&'a PropagationFailure),
}

/// One JSON line per frame (object ids with mask digests), per reinit event,
/// and for a failure if one occurred. Events precede the frame they occur on.
pub fn write_run_log<W: Write>(result: &SegmentationResult, mut out: W) -> std::io::Result<()> {
    let mut events = result.provenance.reinit_events.iter().peekable();
    for (&t, masks) in &result.frames {
        while let Some(e) = events.next_if(|e| e.frame_index <= t) {
            serde_json::to_writer(&mut out, &LogRecord::Reinit(e))?;
            out.write_all(b"\n")?;
        }
        let rec = LogRecord::Frame {
            frame_index: t,
            objects: masks.iter().map(|(id, m)| (*id, mask_digest(m))).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    for e in events {
        serde_json::to_writer(&mut out, &LogRecord::Reinit(e))?;
        out.write_all(b"\n")?;
    }
    if let Some(f) = &result.failure {
        serde_json::to_writer(&mut out, &LogRecord::Failure(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProvenanceFile {
    provenance: Provenance,
    failure: Option<PropagationFailure>,
    frames: Vec<usize>,
}

/// Persist as `masks/<frame>.json` (object id → RLE), `provenance.json` and `run_log.jsonl`.
pub fn save_result(result: &SegmentationResult, dir: &Path) -> Result<(), PropagationError> {
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&masks_dir)?;
    for (t, masks) in &result.frames {
        let file = std::fs::File::create(masks_dir.join(format!("{t:06}.json")))?;
        serde_json::to_writer(std::io::BufWriter::new(file), masks)
            .map_err(|e| PropagationError::Format(e.to_string()))?;
    }
    let prov = ProvenanceFile {
        provenance: result.provenance.clone(),
        failure: result.failure.clone(),
        frames: result.frames.keys().copied().collect(),
    };
    let text = serde_json::to_string_pretty(&prov).map_err(|e| PropagationError::Format(e.to_string()))?;
    std::fs::write(dir.join("provenance.json"), text)?;
    let log = std::fs::File::create(dir.join("run_log.jsonl"))?;
    write_run_log(result, std::io::BufWriter::new(log))?;
    Ok(())
}

pub fn load_result(dir: &Path) -> Result<SegmentationResult, PropagationError> {
    let text = std::fs::read_to_string(dir.join("provenance.json"))?;
    let prov: ProvenanceFile =
        serde_json::from_str(&text).map_err(|e| PropagationError::Format(e.to_string()))?;
    let mut frames = BTreeMap::new();
    for t in prov.frames {
        let text = std::fs::read_to_string(dir.join("masks").join(format!("{t:06}.json")))?;
        let masks: BTreeMap<ObjectId, BinaryMask> =
            serde_json::from_str(&text).map_err(|e| PropagationError::Format(e.to_string()))?;
        frames.insert(t, masks);
    }
    Ok(SegmentationResult {
        frames,
        provenance: prov.provenance,
        failure: prov.failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_schedule_dense() {
        let frames: Vec<usize> = (0..100).collect();
        assert_eq!(schedule_interval_reinits(&frames, 30).unwrap(), vec![30, 60, 90]);
        assert_eq!(schedule_interval_reinits(&frames, 60).unwrap(), vec![60]);
    }

    #[test]
    fn interval_schedule_nearest_later() {
        let frames: Vec<usize> = (0..100).filter(|f| f % 4 == 0).collect();
        assert_eq!(schedule_interval_reinits(&frames, 30).unwrap(), vec![32, 60, 92]);
    }

    #[test]
    fn interval_schedule_anchored_at_first_annotation() {
        let frames: Vec<usize> = (5..50).collect();
        assert_eq!(schedule_interval_reinits(&frames, 20).unwrap(), vec![25, 45]);
    }

    #[test]
    fn interval_schedule_errors() {
        assert!(matches!(
            schedule_interval_reinits(&[], 5),
            Err(PropagationError::NoAnnotatedFrames)
        ));
        assert!(matches!(
            schedule_interval_reinits(&[0, 1], 0),
            Err(PropagationError::ZeroInterval)
        ));
    }

    #[test]
    fn new_object_detection() {
        let mk = |ids: &[u32]| -> Vec<InstanceAnnotation> {
            ids.iter()
                .map(|&i| {
                    InstanceAnnotation::new(0, i, 1, BinaryMask::from_pixels(2, 2, &[(0, 0)]))
                        .unwrap()
                })
                .collect()
        };
        let tracked: BTreeSet<u32> = [1, 2].into();
        assert!(detect_new_objects(&mk(&[1, 2]), &tracked).is_empty());
        assert_eq!(detect_new_objects(&mk(&[1, 2, 3]), &tracked), [3].into());
        assert!(detect_new_objects(&mk(&[]), &[1].into()).is_empty());
    }

    #[test]
    fn policy_strings() {
        for p in [
            ReinitPolicy::none(),
            ReinitPolicy::every(30),
            ReinitPolicy::none().with_new_object_trigger(),
            ReinitPolicy::every(60).with_new_object_trigger(),
        ] {
            assert_eq!(p.to_string().parse::<ReinitPolicy>().unwrap(), p);
        }
        assert_eq!(ReinitPolicy::every(30).table_suffix(), "Reinit 30");
        assert!("reinit-0".parse::<ReinitPolicy>().is_err());
        assert!("sometimes".parse::<ReinitPolicy>().is_err());
    }
}
