//! Black-box checks every [`SegmenterSession`] implementation must pass.
//!
//! The same suite runs against the mock and against the bridge, so the two are
//! interchangeable above the session trait. Each check receives a factory and
//! opens fresh sessions as needed.

use std::collections::BTreeMap;

use crate::dataset::{AnnotatedVideo, InstanceAnnotation, VideoSequence};
use crate::mask::{BBox, BinaryMask};
use crate::prompt::{build_prompt_set, Prompt, PromptStrategy};
use crate::session::{SegmenterSession, SessionError};

pub const FIXTURE_FRAMES: usize = 5;
pub const FIXTURE_SIZE: (u32, u32) = (24, 16);

/// Five frames, two objects of different classes: object 0 slides right one
/// pixel per frame, object 1 is static and made of two separate blocks.
pub fn fixture_video() -> AnnotatedVideo {
    let (w, h) = FIXTURE_SIZE;
    let seq = VideoSequence::blank("fixture", FIXTURE_FRAMES, w, h);
    let mut anns = BTreeMap::new();
    for f in 0..FIXTURE_FRAMES {
        let x = 2 + f as u32;
        let moving = BinaryMask::rect(w, h, BBox { x_min: x, y_min: 2, x_max: x + 5, y_max: 7 });
        let blocks = BinaryMask::rect(w, h, BBox { x_min: 14, y_min: 9, x_max: 17, y_max: 13 })
            .union(&BinaryMask::rect(w, h, BBox { x_min: 20, y_min: 9, x_max: 22, y_max: 13 }))
            .expect("same size");
        let v = vec![
            InstanceAnnotation::new(f, 0, 1, moving).expect("non-empty"),
            InstanceAnnotation::new(f, 1, 2, blocks).expect("non-empty"),
        ];
        anns.insert(f, v);
    }
    let names = BTreeMap::from([(1, "tool".to_string()), (2, "tissue".to_string())]);
    AnnotatedVideo::new(seq, anns, names).expect("valid fixture")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: &'static str,
    pub message: String,
}

type Factory<'a> = dyn FnMut() -> Result<Box<dyn SegmenterSession>, SessionError> + 'a;

fn fail(check: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        check,
        message: message.into(),
    }
}

fn prompts(video: &AnnotatedVideo, frame: usize, strategy: &PromptStrategy) -> Vec<Prompt> {
    build_prompt_set(video, frame, strategy).expect("fixture frames are annotated")
}

fn open(factory: &mut Factory<'_>, check: &'static str) -> Result<Box<dyn SegmenterSession>, Violation> {
    factory().map_err(|e| fail(check, format!("open failed: {e}")))
}

fn check_shape(video: &AnnotatedVideo, factory: &mut Factory<'_>) -> Result<(), Violation> {
    const C: &str = "shape";
    let mut s = open(factory, C)?;
    if s.frame_count() != video.sequence().len() {
        return Err(fail(C, format!("frame_count {} != {}", s.frame_count(), video.sequence().len())));
    }
    let seed = prompts(video, 0, &PromptStrategy::mask());
    s.add_prompts(0, &seed).map_err(|e| fail(C, e.to_string()))?;
    for f in 0..video.sequence().len() {
        let masks = s.propagate(f).map_err(|e| fail(C, format!("frame {f}: {e}")))?;
        let ids: Vec<u32> = masks.keys().copied().collect();
        if ids != [0, 1] {
            return Err(fail(C, format!("frame {f}: objects {ids:?}, expected [0, 1]")));
        }
        if let Some(m) = masks.values().find(|m| m.dims() != FIXTURE_SIZE) {
            return Err(fail(C, format!("frame {f}: mask is {:?}", m.dims())));
        }
    }
    Ok(())
}

fn check_coverage(video: &AnnotatedVideo, factory: &mut Factory<'_>) -> Result<(), Violation> {
    const C: &str = "coverage";
    let mut s = open(factory, C)?;
    // Seeding at a later frame: earlier frames must not report the object.
    let seed = prompts(video, 2, &PromptStrategy::bbox());
    s.add_prompts(2, &seed).map_err(|e| fail(C, e.to_string()))?;
    for f in 2..video.sequence().len() {
        let masks = s.propagate(f).map_err(|e| fail(C, format!("frame {f}: {e}")))?;
        if masks.len() != 2 {
            return Err(fail(C, format!("frame {f}: {} objects", masks.len())));
        }
    }
    match s.propagate(video.sequence().len()) {
        Err(SessionError::FrameOutOfRange { .. }) => Ok(()),
        other => Err(fail(C, format!("out-of-range frame gave {other:?}"))),
    }
}

fn check_reset(video: &AnnotatedVideo, factory: &mut Factory<'_>) -> Result<(), Violation> {
    const C: &str = "reset";
    let before = prompts(video, 0, &PromptStrategy::one_point_random());
    let after = prompts(video, 2, &PromptStrategy::mask());

    let mut reused = open(factory, C)?;
    reused.add_prompts(0, &before).map_err(|e| fail(C, e.to_string()))?;
    for f in 0..3 {
        reused.propagate(f).map_err(|e| fail(C, e.to_string()))?;
    }
    reused.reset_memory().map_err(|e| fail(C, e.to_string()))?;
    match reused.propagate(3) {
        Ok(m) if !m.is_empty() => {
            return Err(fail(C, "objects survived reset"));
        }
        _ => {}
    }
    reused.add_prompts(2, &after).map_err(|e| fail(C, e.to_string()))?;

    let mut fresh = open(factory, C)?;
    fresh.add_prompts(2, &after).map_err(|e| fail(C, e.to_string()))?;
    for f in 2..video.sequence().len() {
        let a = reused.propagate(f).map_err(|e| fail(C, e.to_string()))?;
        let b = fresh.propagate(f).map_err(|e| fail(C, e.to_string()))?;
        if a != b {
            return Err(fail(C, format!("frame {f}: reset+reseed differs from a fresh session")));
        }
    }
    Ok(())
}

fn check_rejections(video: &AnnotatedVideo, factory: &mut Factory<'_>) -> Result<(), Violation> {
    const C: &str = "rejections";
    let mut s = open(factory, C)?;
    let caps = s.capabilities();
    let seed = prompts(video, 1, &PromptStrategy::mask());
    match s.add_prompts(0, &seed) {
        Err(SessionError::FrameMismatch { .. }) => {}
        other => return Err(fail(C, format!("mismatched frame gave {other:?}"))),
    }
    let frames = video.sequence().len();
    let late = prompts(video, frames - 1, &PromptStrategy::bbox());
    if caps.boxes {
        let mut moved = late.clone();
        for p in &mut moved {
            if let Prompt::Box(b) = p {
                b.frame_index = frames;
            }
        }
        match s.add_prompts(frames, &moved) {
            Err(SessionError::FrameOutOfRange { .. }) => {}
            other => return Err(fail(C, format!("out-of-range prompt gave {other:?}"))),
        }
    }
    if caps.masks {
        let mut small = prompts(video, 0, &PromptStrategy::mask());
        if let Prompt::Mask(m) = &mut small[0] {
            m.mask = BinaryMask::full(3, 3);
        }
        match s.add_prompts(0, &small) {
            Err(SessionError::PromptResolution { .. }) => {}
            other => return Err(fail(C, format!("wrong-size mask gave {other:?}"))),
        }
    }
    Ok(())
}

fn check_determinism(video: &AnnotatedVideo, factory: &mut Factory<'_>) -> Result<(), Violation> {
    const C: &str = "determinism";
    let seed = prompts(video, 0, &PromptStrategy::three_points_random());
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut s = open(factory, C)?;
        s.add_prompts(0, &seed).map_err(|e| fail(C, e.to_string()))?;
        let out: Vec<_> = (0..video.sequence().len())
            .map(|f| s.propagate(f))
            .collect::<Result<_, _>>()
            .map_err(|e| fail(C, e.to_string()))?;
        runs.push(out);
    }
    if runs[0] != runs[1] {
        return Err(fail(C, "identical inputs produced different masks"));
    }
    Ok(())
}

/// Run every check against sessions bound to `video` (normally
/// [`fixture_video`]). Returns all violations; empty means conformant.
pub fn run_contract_suite(
    video: &AnnotatedVideo,
    factory: &mut Factory<'_>,
) -> Vec<Violation> {
    type Check = fn(&AnnotatedVideo, &mut Factory<'_>) -> Result<(), Violation>;
    let checks: [Check; 5] = [
        check_shape,
        check_coverage,
        check_reset,
        check_rejections,
        check_determinism,
    ];
    checks
        .iter()
        .filter_map(|c| c(video, factory).err())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{DriftModel, MockSession};
    use std::sync::Arc;

    #[test]
    fn mock_passes_contract() {
        let video = Arc::new(fixture_video());
        for drift in [DriftModel::none(), DriftModel::translation(1.0, 0.5)] {
            let v = video.clone();
            let mut factory = move || {
                MockSession::new(v.clone(), drift).map(|s| Box::new(s) as Box<dyn SegmenterSession>)
            };
            let violations = run_contract_suite(&video, &mut factory);
            assert!(violations.is_empty(), "{violations:?}");
        }
    }
}
