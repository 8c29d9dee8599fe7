//! A tiny per-pixel model with the same five module groups as the real
//! segmenter. It exists so the orchestration (freezing, supervision masks,
//! logging, checkpoint round-trips) can be exercised end to end on a CPU.
//!
//! For each object, pixel logits are
//!
//! ```text
//! z = w * (a_p * P + b_p + a_i * I + a_t * a_m * M) + c
//! ```
//!
//! where `P` is the rasterized prompt, `I` the frame luma and `M` the
//! object's probability map from the previous frame (detached). Groups own
//! `PE = [a_p, b_p]`, `IE = [a_i]`, `ME = [a_m]`, `MA = [a_t]`, `MD = [w, c]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, FinetuneError, LossConfig, ModuleGroup, StepReport, TrainableRuntime, TrainingClip};
use crate::dataset::ObjectId;
use crate::mask::BinaryMask;
use crate::prompt::{PointLabel, Prompt};
use crate::session::{validate_prompts, Capabilities, SegmenterSession, SessionError};

const POINT_RADIUS: i64 = 3;
const DICE_SMOOTH: f64 = 1.0;

fn initial_parameters() -> BTreeMap<ModuleGroup, Vec<f64>> {
    BTreeMap::from([
        (ModuleGroup::PromptEncoder, vec![6.0, -3.0]),
        (ModuleGroup::ImageEncoder, vec![0.0]),
        (ModuleGroup::MemoryEncoder, vec![5.0]),
        (ModuleGroup::MemoryAttention, vec![1.0]),
        (ModuleGroup::MaskDecoder, vec![1.0, 0.0]),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Weights {
    a_p: f64,
    b_p: f64,
    a_i: f64,
    a_m: f64,
    a_t: f64,
    w: f64,
    c: f64,
}

impl Weights {
    fn from_params(p: &BTreeMap<ModuleGroup, Vec<f64>>) -> Self {
        let g = |group: ModuleGroup, i: usize| p[&group][i];
        Self {
            a_p: g(ModuleGroup::PromptEncoder, 0),
            b_p: g(ModuleGroup::PromptEncoder, 1),
            a_i: g(ModuleGroup::ImageEncoder, 0),
            a_m: g(ModuleGroup::MemoryEncoder, 0),
            a_t: g(ModuleGroup::MemoryAttention, 0),
            w: g(ModuleGroup::MaskDecoder, 0),
            c: g(ModuleGroup::MaskDecoder, 1),
        }
    }

    fn hidden(&self, p: f64, i: f64, m: f64) -> f64 {
        self.a_p * p + self.b_p + self.a_i * i + self.a_t * self.a_m * m
    }

    fn logit(&self, p: f64, i: f64, m: f64) -> f64 {
        self.w * self.hidden(p, i, m) + self.c
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Prompt raster in [-1, 1]: masks, boxes and positive points mark +1,
/// negative points mark -1.
pub(crate) fn rasterize(prompts: &[&Prompt], width: u32, height: u32) -> Vec<f64> {
    let mut out = vec![0.0; width as usize * height as usize];
    let mut put = |x: i64, y: i64, v: f64| {
        if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
            out[y as usize * width as usize + x as usize] = v;
        }
    };
    for p in prompts {
        match p {
            Prompt::Mask(m) => m.mask.foreground().for_each(|(x, y)| put(x.into(), y.into(), 1.0)),
            Prompt::Box(b) => {
                for y in b.top_left.1..=b.bottom_right.1 {
                    for x in b.top_left.0..=b.bottom_right.0 {
                        put(x.into(), y.into(), 1.0);
                    }
                }
            }
            Prompt::Point(pt) => {
                let v = if pt.label == PointLabel::Positive { 1.0 } else { -1.0 };
                for dy in -POINT_RADIUS..=POINT_RADIUS {
                    for dx in -POINT_RADIUS..=POINT_RADIUS {
                        if dx * dx + dy * dy <= POINT_RADIUS * POINT_RADIUS {
                            put(i64::from(pt.x) + dx, i64::from(pt.y) + dy, v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-pixel probabilities for one object on one frame.
fn forward(wts: &Weights, prompt: Option<&[f64]>, image: &[f32], memory: Option<&[f64]>, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let p = prompt.map_or(0.0, |v| v[k]);
            let i = image.get(k).copied().map_or(0.0, f64::from);
            let m = memory.map_or(0.0, |v| v[k]);
            sigmoid(wts.logit(p, i, m))
        })
        .collect()
}

/// Combined loss and its gradient with respect to the logits.
pub(crate) fn loss_and_logit_grad(prob: &[f64], target: &BinaryMask, cfg: &LossConfig) -> (f64, Vec<f64>) {
    let n = prob.len() as f64;
    let y: Vec<f64> = target.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    let eps = 1e-12;
    let bce = prob
        .iter()
        .zip(&y)
        .map(|(&p, &t)| -(t * (p + eps).ln() + (1.0 - t) * (1.0 - p + eps).ln()))
        .sum::<f64>()
        / n;
    let s_py: f64 = prob.iter().zip(&y).map(|(p, t)| p * t).sum();
    let s_p: f64 = prob.iter().sum();
    let s_y: f64 = y.iter().sum();
    let num = 2.0 * s_py + DICE_SMOOTH;
    let den = s_p + s_y + DICE_SMOOTH;
    let dice_loss = 1.0 - num / den;
    let loss = cfg.cross_entropy_weight * bce + cfg.dice_weight * dice_loss;
    let grad = prob
        .iter()
        .zip(&y)
        .map(|(&p, &t)| {
            let d_bce = (p - t) / n;
            // d(1 - num/den)/dp, then through the sigmoid.
            let d_dice_dp = -(2.0 * t * den - num) / (den * den);
            cfg.cross_entropy_weight * d_bce + cfg.dice_weight * d_dice_dp * p * (1.0 - p)
        })
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    variant: String,
    parameters: BTreeMap<ModuleGroup, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState {
    m: BTreeMap<ModuleGroup, Vec<f64>>,
    v: BTreeMap<ModuleGroup, Vec<f64>>,
    t: i32,
}

/// CPU reference implementation of [`TrainableRuntime`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRuntime {
    parameters: BTreeMap<ModuleGroup, Vec<f64>>,
    trainable: BTreeMap<ModuleGroup, bool>,
    adam: AdamState,
}

impl Default for ToyRuntime {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyRuntime {
    pub const VARIANT: &'static str = "toy";

    /// Fresh runtime with the built-in starting weights, everything frozen.
    pub fn new() -> Self {
        Self::from_parameters(initial_parameters())
    }

    fn from_parameters(parameters: BTreeMap<ModuleGroup, Vec<f64>>) -> Self {
        let zeros: BTreeMap<_, _> = parameters.iter().map(|(g, v)| (*g, vec![0.0; v.len()])).collect();
        Self {
            trainable: parameters.keys().map(|g| (*g, false)).collect(),
            adam: AdamState {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
            parameters,
        }
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, FinetuneError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| FinetuneError::Runtime(format!("{}: {e}", path.display())))?;
        let reference = initial_parameters();
        let shapes_match = ck.parameters.len() == reference.len()
            && reference
                .iter()
                .all(|(g, v)| ck.parameters.get(g).is_some_and(|p| p.len() == v.len()));
        if ck.variant != Self::VARIANT || !shapes_match {
            return Err(FinetuneError::Runtime(format!(
                "{} is not a {} checkpoint",
                path.display(),
                Self::VARIANT
            )));
        }
        Ok(Self::from_parameters(ck.parameters))
    }

    pub fn parameters(&self, group: ModuleGroup) -> &[f64] {
        &self.parameters[&group]
    }

    fn weights(&self) -> Weights {
        Weights::from_params(&self.parameters)
    }

    /// Loss and parameter gradients for one clip, without updating anything.
    pub fn loss_and_gradient(
        &self,
        clip: &TrainingClip,
        loss: &LossConfig,
    ) -> (f64, usize, BTreeMap<ModuleGroup, Vec<f64>>) {
        let wts = self.weights();
        let n = clip.width as usize * clip.height as usize;
        let mut grads: BTreeMap<ModuleGroup, Vec<f64>> =
            self.parameters.iter().map(|(g, v)| (*g, vec![0.0; v.len()])).collect();
        let mut memory: BTreeMap<ObjectId, Vec<f64>> = BTreeMap::new();
        let mut total = 0.0;
        let mut terms = 0usize;
        for frame in &clip.frames {
            let mut by_object: BTreeMap<ObjectId, Vec<&Prompt>> = BTreeMap::new();
            for p in &frame.prompts {
                by_object.entry(p.object_id()).or_default().push(p);
            }
            let mut ids: Vec<ObjectId> = memory.keys().copied().collect();
            ids.extend(by_object.keys().copied());
            ids.sort_unstable();
            ids.dedup();
            let mut next = BTreeMap::new();
            for id in ids {
                let prompt = by_object.get(&id).map(|ps| rasterize(ps, clip.width, clip.height));
                // A new prompt restarts the object's memory.
                let mem = if prompt.is_some() { None } else { memory.get(&id) };
                let prob = forward(&wts, prompt.as_deref(), &frame.image, mem.map(Vec::as_slice), n);
                if let Some(target) = frame.targets.as_ref().and_then(|t| t.get(&id)) {
                    let (l, dz) = loss_and_logit_grad(&prob, target, loss);
                    total += l;
                    terms += 1;
                    accumulate(&wts, &mut grads, &dz, prompt.as_deref(), &frame.image, mem.map(Vec::as_slice));
                }
                next.insert(id, prob);
            }
            memory = next;
        }
        if terms > 0 {
            let scale = 1.0 / terms as f64;
            grads.values_mut().flatten().for_each(|g| *g *= scale);
            total *= scale;
        }
        (total, terms, grads)
    }
}

fn accumulate(
    wts: &Weights,
    grads: &mut BTreeMap<ModuleGroup, Vec<f64>>,
    dz: &[f64],
    prompt: Option<&[f64]>,
    image: &[f32],
    memory: Option<&[f64]>,
) {
    let (mut g_ap, mut g_bp, mut g_ai, mut g_am, mut g_at, mut g_w, mut g_c) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &d) in dz.iter().enumerate() {
        let p = prompt.map_or(0.0, |v| v[k]);
        let i = image.get(k).copied().map_or(0.0, f64::from);
        let m = memory.map_or(0.0, |v| v[k]);
        g_w += d * wts.hidden(p, i, m);
        g_c += d;
        g_ap += d * wts.w * p;
        g_bp += d * wts.w;
        g_ai += d * wts.w * i;
        g_am += d * wts.w * wts.a_t * m;
        g_at += d * wts.w * wts.a_m * m;
    }
    let mut add = |g: ModuleGroup, i: usize, v: f64| grads.get_mut(&g).expect("all groups present")[i] += v;
    add(ModuleGroup::PromptEncoder, 0, g_ap);
    add(ModuleGroup::PromptEncoder, 1, g_bp);
    add(ModuleGroup::ImageEncoder, 0, g_ai);
    add(ModuleGroup::MemoryEncoder, 0, g_am);
    add(ModuleGroup::MemoryAttention, 0, g_at);
    add(ModuleGroup::MaskDecoder, 0, g_w);
    add(ModuleGroup::MaskDecoder, 1, g_c);
}

#[cfg(test)]
/// Loss and gradient of a single (frame, object) term with memory held fixed.
fn term_gradient(
    params: &BTreeMap<ModuleGroup, Vec<f64>>,
    prompt: Option<&[f64]>,
    image: &[f32],
    memory: Option<&[f64]>,
    target: &BinaryMask,
    loss: &LossConfig,
) -> (f64, BTreeMap<ModuleGroup, Vec<f64>>) {
    let wts = Weights::from_params(params);
    let prob = forward(&wts, prompt, image, memory, target.len());
    let (l, dz) = loss_and_logit_grad(&prob, target, loss);
    let mut grads = params.iter().map(|(g, v)| (*g, vec![0.0; v.len()])).collect();
    accumulate(&wts, &mut grads, &dz, prompt, image, memory);
    (l, grads)
}

impl TrainableRuntime for ToyRuntime {
    fn variant(&self) -> String {
        Self::VARIANT.into()
    }

    fn module_groups(&self) -> Vec<ModuleGroup> {
        self.parameters.keys().copied().collect()
    }

    fn parameter_count(&self, group: ModuleGroup) -> usize {
        self.parameters.get(&group).map_or(0, Vec::len)
    }

    fn parameter_digest(&self, group: ModuleGroup) -> String {
        let mut h = Sha256::new();
        for v in self.parameters.get(&group).into_iter().flatten() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn set_trainable(&mut self, group: ModuleGroup, trainable: bool) {
        if let Some(t) = self.trainable.get_mut(&group) {
            *t = trainable;
        }
    }

    fn is_trainable(&self, group: ModuleGroup) -> bool {
        self.trainable.get(&group).copied().unwrap_or(false)
    }

    fn step(
        &mut self,
        clip: &TrainingClip,
        loss: &LossConfig,
        opt: &AdamConfig,
        learning_rate: f64,
    ) -> Result<StepReport, FinetuneError> {
        let (value, terms, grads) = self.loss_and_gradient(clip, loss);
        if terms == 0 || !value.is_finite() {
            return Ok(StepReport {
                loss: value,
                supervised_terms: terms,
            });
        }
        self.adam.t += 1;
        let t = self.adam.t;
        for (group, g) in &grads {
            if !self.is_trainable(*group) {
                continue;
            }
            let params = self.parameters.get_mut(group).expect("same keys");
            let m = self.adam.m.get_mut(group).expect("same keys");
            let v = self.adam.v.get_mut(group).expect("same keys");
            for k in 0..g.len() {
                m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
                v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
                let m_hat = m[k] / (1.0 - opt.beta1.powi(t));
                let v_hat = v[k] / (1.0 - opt.beta2.powi(t));
                params[k] -= learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon);
            }
        }
        Ok(StepReport {
            loss: value,
            supervised_terms: terms,
        })
    }

    fn save_checkpoint(&self, path: &Path) -> Result<(), FinetuneError> {
        let ck = Checkpoint {
            variant: Self::VARIANT.into(),
            parameters: self.parameters.clone(),
        };
        let text = serde_json::to_string_pretty(&ck).map_err(|e| FinetuneError::Runtime(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ToyTrack {
    prompt_frame: usize,
    prompt: Vec<f64>,
    /// Last frame computed and its probabilities.
    cursor: Option<(usize, Vec<f64>)>,
}

/// Inference with a [`ToyRuntime`] checkpoint, seeded once and propagated
/// forward through memory.
#[derive(Debug, Clone)]
pub struct ToySession {
    weights: Weights,
    lumas: Vec<Vec<f32>>,
    width: u32,
    height: u32,
    label: String,
    tracks: BTreeMap<ObjectId, ToyTrack>,
}

impl ToySession {
    /// `lumas` holds one row-major luma image per frame; empty vectors stand in
    /// for unavailable pixels.
    pub fn new(
        runtime: &ToyRuntime,
        label: impl Into<String>,
        width: u32,
        height: u32,
        lumas: Vec<Vec<f32>>,
    ) -> Result<Self, SessionError> {
        if lumas.is_empty() || width == 0 || height == 0 {
            return Err(SessionError::Startup("video has no frames".into()));
        }
        let n = width as usize * height as usize;
        if let Some(f) = lumas.iter().position(|l| !l.is_empty() && l.len() != n) {
            return Err(SessionError::Startup(format!("frame {f} luma does not match {width}x{height}")));
        }
        Ok(Self {
            weights: runtime.weights(),
            lumas,
            width,
            height,
            label: label.into(),
            tracks: BTreeMap::new(),
        })
    }

    fn probabilities(&self, track: &ToyTrack, frame: usize) -> Vec<f64> {
        let n = self.width as usize * self.height as usize;
        let (mut f, mut prob) = match &track.cursor {
            Some((c, p)) if *c <= frame => (*c, p.clone()),
            _ => (
                track.prompt_frame,
                forward(&self.weights, Some(&track.prompt), &self.lumas[track.prompt_frame], None, n),
            ),
        };
        while f < frame {
            f += 1;
            prob = forward(&self.weights, None, &self.lumas[f], Some(&prob), n);
        }
        prob
    }
}

impl SegmenterSession for ToySession {
    fn identity(&self) -> String {
        format!("{}({})", ToyRuntime::VARIANT, self.label)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn frame_count(&self) -> usize {
        self.lumas.len()
    }

    fn add_prompts(&mut self, frame_index: usize, prompts: &[Prompt]) -> Result<(), SessionError> {
        validate_prompts(
            &self.capabilities(),
            frame_index,
            self.frame_count(),
            (self.width, self.height),
            prompts,
        )?;
        let mut by_object: BTreeMap<ObjectId, Vec<&Prompt>> = BTreeMap::new();
        for p in prompts {
            by_object.entry(p.object_id()).or_default().push(p);
        }
        for (id, ps) in by_object {
            self.tracks.insert(
                id,
                ToyTrack {
                    prompt_frame: frame_index,
                    prompt: rasterize(&ps, self.width, self.height),
                    cursor: None,
                },
            );
        }
        Ok(())
    }

    fn propagate(&mut self, frame_index: usize) -> Result<BTreeMap<ObjectId, BinaryMask>, SessionError> {
        if frame_index >= self.frame_count() {
            return Err(SessionError::FrameOutOfRange {
                frame_index,
                frames: self.frame_count(),
            });
        }
        let ids: Vec<ObjectId> = self
            .tracks
            .iter()
            .filter(|(_, t)| t.prompt_frame <= frame_index)
            .map(|(id, _)| *id)
            .collect();
        let mut out = BTreeMap::new();
        for id in ids {
            let prob = self.probabilities(&self.tracks[&id], frame_index);
            let bits = prob.iter().map(|&p| p > 0.5).collect();
            let mask = BinaryMask::from_bits(self.width, self.height, bits).expect("sized from frame");
            self.tracks.get_mut(&id).expect("listed").cursor = Some((frame_index, prob));
            out.insert(id, mask);
        }
        Ok(out)
    }

    fn reset_memory(&mut self) -> Result<(), SessionError> {
        self.tracks.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformance::{fixture_video, run_contract_suite};
    use crate::finetune::ClipFrame;
    use crate::prompt::MaskPrompt;

    fn clip() -> TrainingClip {
        let (w, h) = (6, 5);
        let target = BinaryMask::from_fn(w, h, |x, y| x >= 2 && y >= 1 && x < 5);
        let hint = BinaryMask::from_fn(w, h, |x, y| x >= 3 && y >= 2 && x < 5);
        let image: Vec<f32> = (0..w * h).map(|k| (k % 7) as f32 / 7.0).collect();
        let prompts = vec![Prompt::Mask(MaskPrompt {
            mask: hint,
            object_id: 4,
            frame_index: 0,
        })];
        TrainingClip {
            video_id: "v".into(),
            width: w,
            height: h,
            frames: vec![
                ClipFrame {
                    frame_index: 0,
                    image: image.clone(),
                    prompts,
                    targets: Some(BTreeMap::from([(4, target.clone())])),
                },
                ClipFrame {
                    frame_index: 1,
                    image,
                    prompts: vec![],
                    targets: Some(BTreeMap::from([(4, target)])),
                },
            ],
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut params = initial_parameters();
        params.insert(ModuleGroup::ImageEncoder, vec![0.7]);
        let cfg = LossConfig {
            cross_entropy_weight: 1.0,
            dice_weight: 0.5,
        };
        let c = clip();
        let n = 30;
        let target = &c.frames[0].targets.as_ref().unwrap()[&4];
        let prompt = rasterize(&c.frames[0].prompts.iter().collect::<Vec<_>>(), 6, 5);
        let memory: Vec<f64> = (0..n).map(|k| (k % 5) as f64 / 4.0).collect();
        for (prompt, memory) in [(Some(&prompt[..]), None), (None, Some(&memory[..]))] {
            let image = &c.frames[0].image;
            let (_, grads) = term_gradient(&params, prompt, image, memory, target, &cfg);
            let h = 1e-6;
            for group in ModuleGroup::ALL {
                for k in 0..params[&group].len() {
                    let shifted = |d: f64| {
                        let mut p = params.clone();
                        p.get_mut(&group).unwrap()[k] += d;
                        term_gradient(&p, prompt, image, memory, target, &cfg).0
                    };
                    let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let analytic = grads[&group][k];
                    assert!(
                        (numeric - analytic).abs() < 1e-6 * (1.0 + numeric.abs()),
                        "{group}[{k}]: {analytic} vs {numeric}"
                    );
                }
            }
        }
        let (_, terms, _) = ToyRuntime::new().loss_and_gradient(&c, &cfg);
        assert_eq!(terms, 2);
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut rt = ToyRuntime::new();
        rt.set_trainable(ModuleGroup::MaskDecoder, true);
        let before: Vec<String> = ModuleGroup::ALL.iter().map(|g| rt.parameter_digest(*g)).collect();
        let r = rt
            .step(&clip(), &LossConfig::default(), &AdamConfig::default(), 1e-2)
            .unwrap();
        assert!(r.loss.is_finite());
        for (g, d) in ModuleGroup::ALL.iter().zip(before) {
            assert_eq!(rt.parameter_digest(*g) == d, *g != ModuleGroup::MaskDecoder, "{g}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut rt = ToyRuntime::new();
        rt.parameters.insert(ModuleGroup::MaskDecoder, vec![1.25, -0.5]);
        rt.save_checkpoint(&path).unwrap();
        let back = ToyRuntime::load_checkpoint(&path).unwrap();
        assert_eq!(back.parameters, rt.parameters);
        std::fs::write(&path, r#"{"variant":"other","parameters":{}}"#).unwrap();
        assert!(ToyRuntime::load_checkpoint(&path).is_err());
    }

    #[test]
    fn session_satisfies_contract() {
        let video = fixture_video();
        let (w, h) = video.sequence().frame_size().unwrap();
        let rt = ToyRuntime::new();
        let mut open = || {
            let lumas = vec![Vec::new(); video.sequence().len()];
            ToySession::new(&rt, "initial", w, h, lumas).map(|s| Box::new(s) as Box<dyn SegmenterSession>)
        };
        let violations = run_contract_suite(&video, &mut open);
        assert!(violations.is_empty(), "{violations:?}");
    }

    #[test]
    fn mask_prompt_reproduced_on_seed_frame() {
        let video = fixture_video();
        let (w, h) = video.sequence().frame_size().unwrap();
        let mut s = ToySession::new(&ToyRuntime::new(), "t", w, h, vec![Vec::new(); 5]).unwrap();
        let gt = video.frame_annotations(0)[0].mask.clone();
        s.add_prompts(
            0,
            &[Prompt::Mask(MaskPrompt {
                mask: gt.clone(),
                object_id: 0,
                frame_index: 0,
            })],
        )
        .unwrap();
        assert_eq!(s.propagate(0).unwrap()[&0], gt);
        // Memory carries the mask forward; frames are blank so it stays put.
        assert_eq!(s.propagate(3).unwrap()[&0], gt);
    }
}
