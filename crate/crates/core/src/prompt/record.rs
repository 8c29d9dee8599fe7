//! Line-oriented prompt records for audit and replay.
//!
//! One prompt per line, tab separated:
//!
//! ```text
//! video_id  frame_index  object_id  kind  payload
//! ```
//!
//! Payloads: `point` → `x,y,label`; `box` → `x0,y0,2;x1,y1,3`;
//! `mask` → `WxH:c0,c1,...` with column-major RLE counts.

use std::io::{BufRead, Write};

use super::{
    BoxPrompt, MaskPrompt, PointLabel, PointPrompt, Prompt, PromptError, BOX_BOTTOM_RIGHT_LABEL,
    BOX_TOP_LEFT_LABEL,
};
use crate::mask::{BinaryMask, Rle};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub video_id: String,
    pub prompt: Prompt,
}

fn payload(p: &Prompt) -> String {
    match p {
        Prompt::Point(pt) => format!("{},{},{}", pt.x, pt.y, pt.label.value()),
        Prompt::Box(b) => format!(
            "{},{},{BOX_TOP_LEFT_LABEL};{},{},{BOX_BOTTOM_RIGHT_LABEL}",
            b.top_left.0, b.top_left.1, b.bottom_right.0, b.bottom_right.1
        ),
        Prompt::Mask(m) => {
            let rle = m.mask.to_rle();
            let counts: Vec<String> = rle.counts.iter().map(u32::to_string).collect();
            format!("{}x{}:{}", rle.width, rle.height, counts.join(","))
        }
    }
}

pub fn write_prompt_records<W: Write>(
    video_id: &str,
    prompts: &[Prompt],
    mut out: W,
) -> std::io::Result<()> {
    if video_id.contains(['\t', '\n', '\r']) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("video id {video_id:?} contains a tab or newline"),
        ));
    }
    for p in prompts {
        writeln!(
            out,
            "{video_id}\t{}\t{}\t{}\t{}",
            p.frame_index(),
            p.object_id(),
            p.kind(),
            payload(p)
        )?;
    }
    Ok(())
}

fn nums<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>, PromptError> {
    s.split(',')
        .map(|x| {
            x.trim().parse::<T>().map_err(|_| PromptError::Record {
                line,
                message: format!("bad number {x:?}"),
            })
        })
        .collect()
}

pub fn parse_prompt_records<R: BufRead>(input: R) -> Result<Vec<PromptRecord>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| PromptError::Record {
            line: n,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| PromptError::Record {
            line: n,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [video_id, frame, object, kind, body] = fields.as_slice() else {
            return Err(err("expected 5 tab-separated fields"));
        };
        let frame_index: usize = frame.parse().map_err(|_| err("bad frame index"))?;
        let object_id: u32 = object.parse().map_err(|_| err("bad object id"))?;
        let prompt = match *kind {
            "point" => {
                let v: Vec<u32> = nums(body, n)?;
                let [x, y, label] = v.as_slice() else {
                    return Err(err("point payload is x,y,label"));
                };
                let label = u8::try_from(*label)
                    .ok()
                    .and_then(PointLabel::from_value)
                    .ok_or_else(|| err("point label must be 0 or 1"))?;
                Prompt::Point(PointPrompt {
                    x: *x,
                    y: *y,
                    label,
                    object_id,
                    frame_index,
                })
            }
            "box" => {
                let (a, b) = body.split_once(';').ok_or_else(|| err("box payload needs ';'"))?;
                let a: Vec<u32> = nums(a, n)?;
                let b: Vec<u32> = nums(b, n)?;
                match (a.as_slice(), b.as_slice()) {
                    ([x0, y0, 2], [x1, y1, 3]) if x0 < x1 && y0 < y1 => Prompt::Box(BoxPrompt {
                        top_left: (*x0, *y0),
                        bottom_right: (*x1, *y1),
                        object_id,
                        frame_index,
                    }),
                    _ => return Err(err("box corners must be ordered and labeled 2 then 3")),
                }
            }
            "mask" => {
                let (dims, counts) = body.split_once(':').ok_or_else(|| err("mask payload needs ':'"))?;
                let (w, h) = dims.split_once('x').ok_or_else(|| err("mask size is WxH"))?;
                let width: u32 = w.parse().map_err(|_| err("bad mask width"))?;
                let height: u32 = h.parse().map_err(|_| err("bad mask height"))?;
                let counts: Vec<u32> = nums(counts, n)?;
                let mask = BinaryMask::from_rle(&Rle {
                    width,
                    height,
                    counts,
                })
                .map_err(|e| err(&e.to_string()))?;
                Prompt::Mask(MaskPrompt {
                    mask,
                    object_id,
                    frame_index,
                })
            }
            other => return Err(err(&format!("unknown kind {other:?}"))),
        };
        out.push(PromptRecord {
            video_id: video_id.to_string(),
            prompt,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_kinds() {
        let prompts = vec![
            Prompt::Point(PointPrompt {
                x: 3,
                y: 4,
                label: PointLabel::Negative,
                object_id: 2,
                frame_index: 9,
            }),
            Prompt::Box(BoxPrompt {
                top_left: (1, 2),
                bottom_right: (5, 6),
                object_id: 2,
                frame_index: 9,
            }),
            Prompt::Mask(MaskPrompt {
                mask: BinaryMask::from_pixels(3, 2, &[(0, 0), (2, 1)]),
                object_id: 7,
                frame_index: 9,
            }),
        ];
        let mut buf = Vec::new();
        write_prompt_records("clip_01", &prompts, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "clip_01\t9\t2\tpoint\t3,4,0");
        assert_eq!(text.lines().nth(1).unwrap(), "clip_01\t9\t2\tbox\t1,2,2;5,6,3");
        let back = parse_prompt_records(&buf[..]).unwrap();
        assert_eq!(back.iter().map(|r| r.prompt.clone()).collect::<Vec<_>>(), prompts);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_prompt_records(&b"v\t0\t1\tpoint\t1,2,5\n"[..]).is_err());
        assert!(parse_prompt_records(&b"v\t0\t1\tbox\t5,5,2;1,1,3\n"[..]).is_err());
        assert!(parse_prompt_records(&b"v\t0\t1\tpoint\n"[..]).is_err());
    }
}
