//! Binding to an external promptable video segmentation runtime.
//!
//! The runtime runs as a child process speaking the length-prefixed record
//! protocol in [`protocol`] over its stdin and stdout. The framework never
//! reimplements the model; everything it needs goes through
//! [`SegmenterSession`]. The same client also works over any byte stream,
//! which is how it is exercised against [`server::serve`] in tests.

pub mod protocol;
pub mod server;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex, MutexGuard};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::autoseg::{AutoMask, AutoMaskGenerator, AutoSegConfig};
use crate::dataset::{ObjectId, VideoSequence};
use crate::mask::BinaryMask;
use crate::prompt::Prompt;
use crate::session::{validate_prompts, Capabilities, SegmenterSession, SessionError};

use protocol::{read_message, write_message, write_record, OpenRequest, Request, Response, WirePrompt};

pub const ENV_CHECKPOINT: &str = "SURGSEG_CHECKPOINT";
pub const ENV_DEVICE: &str = "SURGSEG_DEVICE";
pub const ENV_RUNTIME: &str = "SURGSEG_RUNTIME";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingResolution {
    /// Frames go to the runtime at their native size.
    #[default]
    Original,
    Fixed { width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub checkpoint: PathBuf,
    pub variant: String,
    #[serde(default = "default_device")]
    pub device: String,
    #[serde(default)]
    pub resolution: ProcessingResolution,
    /// Program and arguments that start the runtime server.
    #[serde(default = "default_runtime")]
    pub runtime_command: Vec<String>,
    /// Ask the runtime for fixed seeds and deterministic kernels.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_device() -> String {
    "cuda".into()
}

fn default_runtime() -> Vec<String> {
    vec!["python3".into(), "runtime/sam2_bridge.py".into()]
}

fn default_true() -> bool {
    true
}

impl BridgeConfig {
    pub fn new(checkpoint: impl Into<PathBuf>, variant: impl Into<String>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            variant: variant.into(),
            device: default_device(),
            resolution: ProcessingResolution::Original,
            runtime_command: default_runtime(),
            deterministic: true,
        }
    }

    /// Checkpoint, device and runtime command may be overridden from the
    /// environment; the runtime command is split on whitespace.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_CHECKPOINT) {
            self.checkpoint = v.into();
        }
        if let Ok(v) = std::env::var(ENV_DEVICE) {
            self.device = v;
        }
        if let Ok(v) = std::env::var(ENV_RUNTIME) {
            self.runtime_command = v.split_whitespace().map(str::to_string).collect();
        }
        self
    }

    /// Local checks. Whether the checkpoint matches the variant is for the
    /// runtime to decide when the session opens.
    pub fn validate(&self) -> Result<(), SessionError> {
        if !self.checkpoint.is_file() {
            return Err(SessionError::Startup(format!(
                "checkpoint {} does not exist",
                self.checkpoint.display()
            )));
        }
        if self.variant.is_empty() {
            return Err(SessionError::Startup("model variant is empty".into()));
        }
        if self.runtime_command.is_empty() {
            return Err(SessionError::Startup("runtime command is empty".into()));
        }
        if let ProcessingResolution::Fixed { width, height } = self.resolution {
            if width == 0 || height == 0 {
                return Err(SessionError::Startup("fixed resolution must be non-zero".into()));
            }
        }
        Ok(())
    }
}

/// A session served by a runtime on the other end of a byte stream.
pub struct BridgeSession {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    identity: String,
    capabilities: Capabilities,
    frame_count: usize,
    frame_size: (u32, u32),
    runtime_info: BTreeMap<String, String>,
}

impl std::fmt::Debug for BridgeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeSession")
            .field("identity", &self.identity)
            .field("frame_count", &self.frame_count)
            .finish_non_exhaustive()
    }
}

fn transport(e: std::io::Error) -> SessionError {
    SessionError::Runtime(format!("transport: {e}"))
}

impl BridgeSession {
    /// Open a session for `video` over an established stream.
    pub fn connect(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        video: &VideoSequence,
        config: &BridgeConfig,
    ) -> Result<Self, SessionError> {
        let frame_size = video
            .frame_size()
            .ok_or_else(|| SessionError::Startup("video has no frames".into()))?;
        let mut s = Self {
            reader,
            writer,
            child: None,
            identity: String::new(),
            capabilities: Capabilities::ALL,
            frame_count: video.len(),
            frame_size,
            runtime_info: BTreeMap::new(),
        };
        let open = OpenRequest {
            video_id: video.video_id().to_string(),
            frame_locators: video.frames().iter().map(|f| f.image_locator.clone()).collect(),
            width: frame_size.0,
            height: frame_size.1,
            checkpoint: config.checkpoint.display().to_string(),
            variant: config.variant.clone(),
            device: config.device.clone(),
            resolution: config.resolution,
            deterministic: config.deterministic,
        };
        match s.call(&Request::Open(open)) {
            Ok(Response::Opened {
                identity,
                capabilities,
                frame_count,
                runtime_info,
            }) => {
                if frame_count != video.len() {
                    return Err(SessionError::Startup(format!(
                        "runtime bound {frame_count} frames, video has {}",
                        video.len()
                    )));
                }
                s.identity = identity;
                s.capabilities = capabilities;
                s.runtime_info = runtime_info;
                Ok(s)
            }
            Ok(other) => Err(SessionError::Protocol(format!("unexpected reply to open: {other:?}"))),
            Err(SessionError::Runtime(m)) => Err(SessionError::Startup(m)),
            Err(e) => Err(e),
        }
    }

    pub fn runtime_info(&self) -> &BTreeMap<String, String> {
        &self.runtime_info
    }

    fn send(&mut self, req: &Request) -> Result<(), SessionError> {
        write_message(&mut self.writer, req).map_err(transport)
    }

    fn receive(&mut self) -> Result<Response, SessionError> {
        match read_message(&mut self.reader).map_err(transport)? {
            None => Err(SessionError::Runtime("runtime closed the connection".into())),
            Some(Response::Error { error }) => Err(error),
            Some(r) => Ok(r),
        }
    }

    fn call(&mut self, req: &Request) -> Result<Response, SessionError> {
        self.send(req)?;
        self.receive()
    }
}

/// Start the configured runtime and open a session for `video` in it.
pub fn open_session(video: &VideoSequence, config: &BridgeConfig) -> Result<BridgeSession, SessionError> {
    config.validate()?;
    let (program, args) = config
        .runtime_command
        .split_first()
        .expect("validated non-empty");
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| SessionError::Startup(format!("cannot start {program}: {e}")))?;
    let stdin = child.stdin.take().expect("piped");
    let stdout = child.stdout.take().expect("piped");
    match BridgeSession::connect(Box::new(stdout), Box::new(stdin), video, config) {
        Ok(mut s) => {
            s.child = Some(child);
            Ok(s)
        }
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            Err(e)
        }
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        let _ = write_message(&mut self.writer, &Request::Close);
        // Closing our end lets a runtime blocked on input exit.
        self.writer = Box::new(std::io::sink());
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

impl SegmenterSession for BridgeSession {
    fn identity(&self) -> String {
        if self.runtime_info.is_empty() {
            return self.identity.clone();
        }
        let info: Vec<String> = self.runtime_info.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{} [{}]", self.identity, info.join(","))
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn add_prompts(&mut self, frame_index: usize, prompts: &[Prompt]) -> Result<(), SessionError> {
        validate_prompts(&self.capabilities, frame_index, self.frame_count, self.frame_size, prompts)?;
        let req = Request::AddPrompts {
            frame_index,
            prompts: prompts.iter().map(WirePrompt::from).collect(),
        };
        match self.call(&req)? {
            Response::Ok => Ok(()),
            other => Err(SessionError::Protocol(format!("unexpected reply to add_prompts: {other:?}"))),
        }
    }

    fn propagate(&mut self, frame_index: usize) -> Result<BTreeMap<ObjectId, BinaryMask>, SessionError> {
        if frame_index >= self.frame_count {
            return Err(SessionError::FrameOutOfRange {
                frame_index,
                frames: self.frame_count,
            });
        }
        match self.call(&Request::Propagate { frame_index })? {
            Response::Masks { masks } => {
                let masks: BTreeMap<ObjectId, BinaryMask> =
                    masks.into_iter().map(|m| (m.object_id, m.mask)).collect();
                if let Some(m) = masks.values().find(|m| m.dims() != self.frame_size) {
                    return Err(SessionError::Protocol(format!(
                        "runtime returned a {:?} mask for a {:?} frame",
                        m.dims(),
                        self.frame_size
                    )));
                }
                Ok(masks)
            }
            other => Err(SessionError::Protocol(format!("unexpected reply to propagate: {other:?}"))),
        }
    }

    fn reset_memory(&mut self) -> Result<(), SessionError> {
        match self.call(&Request::Reset)? {
            Response::Ok => Ok(()),
            other => Err(SessionError::Protocol(format!("unexpected reply to reset: {other:?}"))),
        }
    }
}

impl AutoMaskGenerator for BridgeSession {
    fn identity(&self) -> String {
        SegmenterSession::identity(self)
    }

    fn generate(&mut self, image: &RgbImage, config: &AutoSegConfig) -> Result<Vec<AutoMask>, SessionError> {
        let (width, height) = image.dimensions();
        self.send(&Request::AutoGenerate {
            config: config.clone(),
            width,
            height,
        })?;
        write_record(&mut self.writer, image.as_raw()).map_err(transport)?;
        match self.receive()? {
            Response::Candidates { candidates, .. } => Ok(candidates),
            other => Err(SessionError::Protocol(format!("unexpected reply to auto_generate: {other:?}"))),
        }
    }
}

/// Serializes runtime use per device: hold the guard for the lifetime of a session.
#[derive(Debug, Default, Clone)]
pub struct DeviceLocks {
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl DeviceLocks {
    pub fn lock_for(&self, device: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(device.to_string())
            .or_default()
            .clone()
    }
}

/// Acquire a device lock, ignoring poisoning from a panicked holder.
pub fn acquire(lock: &Mutex<()>) -> MutexGuard<'_, ()> {
    lock.lock().unwrap_or_else(|p| p.into_inner())
}
