//! Wire format between the framework and an out-of-process segmentation runtime.
//!
//! Every record is a big-endian `u32` byte length followed by that many bytes.
//! Control records carry one JSON object. An `auto_generate` request is
//! followed by one raw record of `width * height * 3` RGB bytes.
//!
//! Prompts travel as labeled points the way the runtime consumes them: labels
//! 0/1 for negative/positive clicks and 2/3 for the top-left and bottom-right
//! corners of a box. Masks travel as column-major RLE `{"size": [h, w], "counts": [...]}`.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::autoseg::{AutoMask, AutoSegConfig};
use crate::dataset::ObjectId;
use crate::mask::BinaryMask;
use crate::prompt::{
    BoxPrompt, MaskPrompt, PointLabel, PointPrompt, Prompt, BOX_BOTTOM_RIGHT_LABEL,
    BOX_TOP_LEFT_LABEL,
};
use crate::session::{Capabilities, SessionError};

use super::ProcessingResolution;

/// Upper bound on a single record; guards against reading garbage lengths.
pub const MAX_RECORD_BYTES: u32 = 512 * 1024 * 1024;

pub fn write_record<W: Write + ?Sized>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&n| n <= MAX_RECORD_BYTES)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "record too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a length prefix.
pub fn read_record<R: Read + ?Sized>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_RECORD_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("record of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_message<W: Write + ?Sized, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    write_record(w, &bytes)
}

pub fn read_message<R: Read + ?Sized, T: for<'de> Deserialize<'de>>(r: &mut R) -> io::Result<Option<T>> {
    match read_record(r)? {
        None => Ok(None),
        Some(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenRequest {
    pub video_id: String,
    pub frame_locators: Vec<String>,
    pub width: u32,
    pub height: u32,
    pub checkpoint: String,
    pub variant: String,
    pub device: String,
    pub resolution: ProcessingResolution,
    pub deterministic: bool,
}

/// Prompt input for one object on one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePrompt {
    pub object_id: ObjectId,
    pub frame_index: usize,
    /// `[x, y, label]` triples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BinaryMask>,
}

impl From<&Prompt> for WirePrompt {
    fn from(p: &Prompt) -> Self {
        let (points, mask) = match p {
            Prompt::Point(pt) => (vec![[pt.x, pt.y, u32::from(pt.label.value())]], None),
            Prompt::Box(b) => (
                b.as_labeled_points()
                    .iter()
                    .map(|&(x, y, l)| [x, y, u32::from(l)])
                    .collect(),
                None,
            ),
            Prompt::Mask(m) => (Vec::new(), Some(m.mask.clone())),
        };
        WirePrompt {
            object_id: p.object_id(),
            frame_index: p.frame_index(),
            points,
            mask,
        }
    }
}

impl WirePrompt {
    /// Decode into framework prompts. Corner labels must come as a 2 followed
    /// by a 3; any other label is a protocol error.
    pub fn to_prompts(&self) -> Result<Vec<Prompt>, SessionError> {
        let (object_id, frame_index) = (self.object_id, self.frame_index);
        let mut out = Vec::new();
        if let Some(mask) = &self.mask {
            out.push(Prompt::Mask(MaskPrompt {
                mask: mask.clone(),
                object_id,
                frame_index,
            }));
        }
        let mut it = self.points.iter().peekable();
        while let Some(&[x, y, label]) = it.next() {
            let tl = u32::from(BOX_TOP_LEFT_LABEL);
            let br = u32::from(BOX_BOTTOM_RIGHT_LABEL);
            if label == tl {
                match it.next() {
                    Some(&[x1, y1, l]) if l == br => out.push(Prompt::Box(BoxPrompt {
                        top_left: (x, y),
                        bottom_right: (x1, y1),
                        object_id,
                        frame_index,
                    })),
                    _ => return Err(SessionError::Protocol("box corner 2 not followed by 3".into())),
                }
                continue;
            }
            let label = u8::try_from(label)
                .ok()
                .and_then(PointLabel::from_value)
                .ok_or_else(|| SessionError::Protocol(format!("unexpected point label {label}")))?;
            out.push(Prompt::Point(PointPrompt {
                x,
                y,
                label,
                object_id,
                frame_index,
            }));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub object_id: ObjectId,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Open(OpenRequest),
    AddPrompts {
        frame_index: usize,
        prompts: Vec<WirePrompt>,
    },
    Propagate {
        frame_index: usize,
    },
    Reset,
    AutoGenerate {
        config: AutoSegConfig,
        width: u32,
        height: u32,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Response {
    Opened {
        identity: String,
        capabilities: Capabilities,
        frame_count: usize,
        /// Runtime settings worth recording, such as its multimask default.
        #[serde(default)]
        runtime_info: BTreeMap<String, String>,
    },
    Ok,
    Masks {
        masks: Vec<ObjectMask>,
    },
    Candidates {
        identity: String,
        candidates: Vec<AutoMask>,
    },
    Error {
        error: SessionError,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_framing() {
        let mut buf = Vec::new();
        write_record(&mut buf, b"abc").unwrap();
        write_record(&mut buf, b"").unwrap();
        assert_eq!(&buf[..7], &[0, 0, 0, 3, b'a', b'b', b'c']);
        let mut r = &buf[..];
        assert_eq!(read_record(&mut r).unwrap().unwrap(), b"abc");
        assert_eq!(read_record(&mut r).unwrap().unwrap(), b"");
        assert!(read_record(&mut r).unwrap().is_none());
        let mut truncated = &buf[..5];
        assert!(read_record(&mut truncated).is_err());
    }

    #[test]
    fn box_travels_as_corner_labels() {
        let b = Prompt::Box(BoxPrompt {
            top_left: (1, 2),
            bottom_right: (8, 9),
            object_id: 4,
            frame_index: 0,
        });
        let w = WirePrompt::from(&b);
        assert_eq!(w.points, vec![[1, 2, 2], [8, 9, 3]]);
        assert_eq!(w.to_prompts().unwrap(), vec![b]);
        let json = serde_json::to_string(&Request::AddPrompts {
            frame_index: 0,
            prompts: vec![w],
        })
        .unwrap();
        assert!(json.contains(r#""op":"add_prompts""#));
        assert!(json.contains("[[1,2,2],[8,9,3]]"));
    }

    #[test]
    fn bad_labels_rejected() {
        let w = WirePrompt {
            object_id: 0,
            frame_index: 0,
            points: vec![[1, 1, 2], [2, 2, 1]],
            mask: None,
        };
        assert!(w.to_prompts().is_err());
        let w = WirePrompt {
            points: vec![[1, 1, 7]],
            ..w
        };
        assert!(w.to_prompts().is_err());
    }
}
