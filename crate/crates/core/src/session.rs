//! The contract every promptable video segmenter is driven through.
//!
//! The mock segmenter and the external-runtime bridge both implement
//! [`SegmenterSession`]; everything above this trait is runtime-agnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ObjectId;
use crate::mask::BinaryMask;
use crate::prompt::{Prompt, PromptKindTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub points: bool,
    pub boxes: bool,
    pub masks: bool,
    pub per_object_memory: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        points: true,
        boxes: true,
        masks: true,
        per_object_memory: true,
    };

    pub fn accepts(&self, kind: PromptKindTag) -> bool {
        match kind {
            PromptKindTag::Point => self.points,
            PromptKindTag::Box => self.boxes,
            PromptKindTag::Mask => self.masks,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionError {
    #[error("session does not accept {0} prompts")]
    Capability(PromptKindTag),
    #[error("session startup failed: {0}")]
    Startup(String),
    #[error("out of resources at frame {frame_index}: {message}")]
    Resource { frame_index: usize, message: String },
    #[error("frame {frame_index} is outside the bound video ({frames} frames)")]
    FrameOutOfRange { frame_index: usize, frames: usize },
    #[error("prompt for frame {prompt_frame} delivered with frame {frame_index}")]
    FrameMismatch {
        frame_index: usize,
        prompt_frame: usize,
    },
    #[error("prompt mask is {got:?}, frame is {expected:?}")]
    PromptResolution {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

/// A stateful, single-threaded segmentation session bound to one video.
///
/// After `add_prompts` on frame `t`, `propagate(f)` returns a mask for each
/// prompted object for every `f >= t`, until `reset_memory` discards all
/// prompts and propagation state. The video binding survives a reset.
pub trait SegmenterSession {
    /// Stable identifier recorded in result provenance.
    fn identity(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn frame_count(&self) -> usize;

    fn add_prompts(&mut self, frame_index: usize, prompts: &[Prompt]) -> Result<(), SessionError>;

    /// Masks at `frame_index` for every object prompted at or before it.
    fn propagate(
        &mut self,
        frame_index: usize,
    ) -> Result<BTreeMap<ObjectId, BinaryMask>, SessionError>;

    fn reset_memory(&mut self) -> Result<(), SessionError>;
}

impl<S: SegmenterSession + ?Sized> SegmenterSession for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn frame_count(&self) -> usize {
        (**self).frame_count()
    }
    fn add_prompts(&mut self, frame_index: usize, prompts: &[Prompt]) -> Result<(), SessionError> {
        (**self).add_prompts(frame_index, prompts)
    }
    fn propagate(
        &mut self,
        frame_index: usize,
    ) -> Result<BTreeMap<ObjectId, BinaryMask>, SessionError> {
        (**self).propagate(frame_index)
    }
    fn reset_memory(&mut self) -> Result<(), SessionError> {
        (**self).reset_memory()
    }
}

/// Shared argument checks for session implementations.
pub fn validate_prompts(
    caps: &Capabilities,
    frame_index: usize,
    frames: usize,
    frame_size: (u32, u32),
    prompts: &[Prompt],
) -> Result<(), SessionError> {
    if frame_index >= frames {
        return Err(SessionError::FrameOutOfRange {
            frame_index,
            frames,
        });
    }
    for p in prompts {
        if !caps.accepts(p.kind()) {
            return Err(SessionError::Capability(p.kind()));
        }
        if p.frame_index() != frame_index {
            return Err(SessionError::FrameMismatch {
                frame_index,
                prompt_frame: p.frame_index(),
            });
        }
        if let Prompt::Mask(m) = p {
            if m.mask.dims() != frame_size {
                return Err(SessionError::PromptResolution {
                    expected: frame_size,
                    got: m.mask.dims(),
                });
            }
        }
    }
    Ok(())
}
