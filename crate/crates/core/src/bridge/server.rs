//! Serving side of the record protocol. Any [`SegmenterSession`] can sit behind
//! it, which is how the client is tested without a model runtime and how a
//! Rust frontend can expose the mock to other languages.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::sync::Arc;

use image::RgbImage;

use super::protocol::{
    read_message, read_record, write_message, ObjectMask, OpenRequest, Request, Response,
};
use crate::autoseg::{AutoMaskGenerator, ColorRegionGenerator};
use crate::dataset::AnnotatedVideo;
use crate::mock::{DriftModel, MockSession};
use crate::session::{SegmenterSession, SessionError};

/// Opens sessions on behalf of [`serve`].
pub trait SessionFactory {
    fn open(&mut self, request: &OpenRequest) -> Result<Box<dyn SegmenterSession>, SessionError>;

    fn runtime_info(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    fn auto_generator(&mut self) -> Option<&mut dyn AutoMaskGenerator> {
        None
    }
}

/// Serves mock sessions over videos it holds ground truth for. Accepts only
/// the `mock` variant.
pub struct MockFactory {
    pub videos: BTreeMap<String, Arc<AnnotatedVideo>>,
    pub drift: DriftModel,
    pub generator: ColorRegionGenerator,
}

impl MockFactory {
    pub fn new(videos: impl IntoIterator<Item = AnnotatedVideo>, drift: DriftModel) -> Self {
        Self {
            videos: videos
                .into_iter()
                .map(|v| (v.video_id().to_string(), Arc::new(v)))
                .collect(),
            drift,
            generator: ColorRegionGenerator::default(),
        }
    }
}

impl SessionFactory for MockFactory {
    fn open(&mut self, req: &OpenRequest) -> Result<Box<dyn SegmenterSession>, SessionError> {
        if req.variant != "mock" {
            return Err(SessionError::Startup(format!(
                "variant {:?} is not served here (expected \"mock\")",
                req.variant
            )));
        }
        let video = self
            .videos
            .get(&req.video_id)
            .ok_or_else(|| SessionError::Startup(format!("unknown video {:?}", req.video_id)))?;
        let seq = video.sequence();
        if seq.len() != req.frame_locators.len() || seq.frame_size() != Some((req.width, req.height)) {
            return Err(SessionError::Startup(format!(
                "video {:?} is {} frames of {:?}, request has {} frames of {:?}",
                req.video_id,
                seq.len(),
                seq.frame_size(),
                req.frame_locators.len(),
                (req.width, req.height)
            )));
        }
        Ok(Box::new(MockSession::new(video.clone(), self.drift)?))
    }

    fn runtime_info(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("backend".to_string(), "mock".to_string())])
    }

    fn auto_generator(&mut self) -> Option<&mut dyn AutoMaskGenerator> {
        Some(&mut self.generator)
    }
}

fn handle(
    req: Request,
    reader: &mut dyn Read,
    session: &mut Option<Box<dyn SegmenterSession>>,
    factory: &mut dyn SessionFactory,
) -> io::Result<Result<Response, SessionError>> {
    let no_session = || SessionError::Protocol("no open session".into());
    Ok(match req {
        Request::Open(open) => factory.open(&open).map(|s| {
            let resp = Response::Opened {
                identity: s.identity(),
                capabilities: s.capabilities(),
                frame_count: s.frame_count(),
                runtime_info: factory.runtime_info(),
            };
            *session = Some(s);
            resp
        }),
        Request::AddPrompts {
            frame_index,
            prompts,
        } => (|| {
            let s = session.as_mut().ok_or_else(no_session)?;
            let mut decoded = Vec::new();
            for p in &prompts {
                decoded.extend(p.to_prompts()?);
            }
            s.add_prompts(frame_index, &decoded).map(|_| Response::Ok)
        })(),
        Request::Propagate { frame_index } => session
            .as_mut()
            .ok_or_else(no_session)
            .and_then(|s| s.propagate(frame_index))
            .map(|masks| Response::Masks {
                masks: masks
                    .into_iter()
                    .map(|(object_id, mask)| ObjectMask { object_id, mask })
                    .collect(),
            }),
        Request::Reset => session
            .as_mut()
            .ok_or_else(no_session)
            .and_then(|s| s.reset_memory())
            .map(|_| Response::Ok),
        Request::AutoGenerate {
            config,
            width,
            height,
        } => {
            // The pixel record always follows, even if we end up refusing.
            let pixels = read_record(reader)?.ok_or(io::ErrorKind::UnexpectedEof)?;
            match (factory.auto_generator(), RgbImage::from_raw(width, height, pixels)) {
                (None, _) => Err(SessionError::Runtime("automatic mask generation unsupported".into())),
                (_, None) => Err(SessionError::Protocol("pixel record does not match frame size".into())),
                (Some(g), Some(img)) => g.generate(&img, &config).map(|candidates| Response::Candidates {
                    identity: g.identity(),
                    candidates,
                }),
            }
        }
        Request::Close => Ok(Response::Ok),
    })
}

/// Answer requests until `close` or end of input. Session errors are returned
/// to the client as `error` responses; only transport failures end the loop
/// with an error.
pub fn serve<R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    factory: &mut dyn SessionFactory,
) -> io::Result<()> {
    let mut session: Option<Box<dyn SegmenterSession>> = None;
    loop {
        let req: Request = match read_message(&mut reader) {
            Ok(Some(r)) => r,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                write_message(
                    &mut writer,
                    &Response::Error {
                        error: SessionError::Protocol(e.to_string()),
                    },
                )?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let closing = matches!(req, Request::Close);
        let resp = handle(req, &mut reader, &mut session, factory)?
            .unwrap_or_else(|error| Response::Error { error });
        write_message(&mut writer, &resp)?;
        if closing {
            return Ok(());
        }
    }
}
