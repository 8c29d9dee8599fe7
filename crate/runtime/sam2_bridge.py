#!/usr/bin/env python3
"""Segmentation runtime server for surgseg's bridge.

Speaks the length-prefixed JSON protocol on stdin/stdout (see
`surgseg::bridge::protocol`) and drives the `sam2` package's video predictor
and automatic mask generator. Requires torch, numpy, Pillow and sam2.

    python3 runtime/sam2_bridge.py            # serve on stdio
    python3 runtime/sam2_bridge.py --selftest # check the codecs, no model
"""

import json
import os
import struct
import sys
import tempfile

# Variant name -> (config, default checkpoint file name).
VARIANTS = {
    "sam2_hiera_tiny": ("configs/sam2/sam2_hiera_t.yaml", "sam2_hiera_tiny.pt"),
    "sam2_hiera_small": ("configs/sam2/sam2_hiera_s.yaml", "sam2_hiera_small.pt"),
    "sam2_hiera_base_plus": ("configs/sam2/sam2_hiera_b+.yaml", "sam2_hiera_base_plus.pt"),
    "sam2_hiera_large": ("configs/sam2/sam2_hiera_l.yaml", "sam2_hiera_large.pt"),
    "sam2.1_hiera_tiny": ("configs/sam2.1/sam2.1_hiera_t.yaml", "sam2.1_hiera_tiny.pt"),
    "sam2.1_hiera_small": ("configs/sam2.1/sam2.1_hiera_s.yaml", "sam2.1_hiera_small.pt"),
    "sam2.1_hiera_base_plus": ("configs/sam2.1/sam2.1_hiera_b+.yaml", "sam2.1_hiera_base_plus.pt"),
    "sam2.1_hiera_large": ("configs/sam2.1/sam2.1_hiera_l.yaml", "sam2.1_hiera_large.pt"),
}

BOX_TOP_LEFT = 2
BOX_BOTTOM_RIGHT = 3
MAX_RECORD = 512 * 1024 * 1024


class Failure(Exception):
    """Carries a serialized SessionError."""

    def __init__(self, kind, payload):
        super().__init__(f"{kind}: {payload}")
        self.error = {kind: payload}


def read_record(stream):
    head = stream.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise EOFError("truncated length prefix")
    (n,) = struct.unpack(">I", head)
    if n > MAX_RECORD:
        raise ValueError(f"record of {n} bytes")
    body = stream.read(n)
    if len(body) < n:
        raise EOFError("truncated record")
    return body


def write_message(stream, message):
    body = json.dumps(message, separators=(",", ":")).encode()
    stream.write(struct.pack(">I", len(body)) + body)
    stream.flush()


def encode_mask(mask):
    """Boolean HxW array -> column-major RLE starting with background."""
    h, w = mask.shape
    flat = mask.T.reshape(-1)
    counts, current, run = [], False, 0
    for v in flat:
        v = bool(v)
        if v != current:
            counts.append(run)
            current, run = v, 0
        run += 1
    counts.append(run)
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}


def decode_mask(doc, np):
    h, w = doc["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos, value = 0, False
    for c in doc["counts"]:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    if pos != h * w:
        raise Failure("Protocol", f"mask runs cover {pos} pixels, expected {h * w}")
    return flat.reshape(w, h).T


class Session:
    def __init__(self, req):
        try:
            import numpy as np
            import torch
            from PIL import Image
            from sam2.build_sam import build_sam2, build_sam2_video_predictor
        except ImportError as e:
            raise Failure("Startup", f"missing dependency: {e}")
        self.np, self.torch, self.Image = np, torch, Image
        variant = req["variant"]
        if variant not in VARIANTS:
            raise Failure("Startup", f"unknown variant {variant!r}; known: {sorted(VARIANTS)}")
        config, _ = VARIANTS[variant]
        checkpoint = os.environ.get("SURGSEG_CHECKPOINT") or req["checkpoint"]
        if not os.path.isfile(checkpoint):
            raise Failure("Startup", f"checkpoint {checkpoint!r} not found")
        device = os.environ.get("SURGSEG_DEVICE") or req["device"]
        if req.get("deterministic", True):
            torch.manual_seed(0)
            torch.use_deterministic_algorithms(True, warn_only=True)
        self.width, self.height = req["width"], req["height"]
        self.resize = None
        res = req.get("resolution", "original")
        if isinstance(res, dict) and "fixed" in res:
            self.resize = (res["fixed"]["width"], res["fixed"]["height"])
        self.frames_dir = tempfile.TemporaryDirectory(prefix="surgseg-frames-")
        for i, locator in enumerate(req["frame_locators"]):
            try:
                img = Image.open(locator).convert("RGB")
            except OSError as e:
                raise Failure("Startup", f"frame {i}: {e}")
            if img.size != (self.width, self.height):
                raise Failure("Startup", f"frame {i} is {img.size}, expected {(self.width, self.height)}")
            if self.resize:
                img = img.resize(self.resize, Image.BILINEAR)
            img.save(os.path.join(self.frames_dir.name, f"{i:05d}.jpg"), quality=95)
        self.frame_count = len(req["frame_locators"])
        self.variant, self.checkpoint, self.device = variant, checkpoint, device
        try:
            self.predictor = build_sam2_video_predictor(config, checkpoint, device=device)
            self.image_model = build_sam2(config, checkpoint, device=device)
            self.state = self.predictor.init_state(video_path=self.frames_dir.name)
        except Exception as e:  # noqa: BLE001 - any model load failure is a startup failure
            raise Failure("Startup", f"model load: {e}")
        self.cache = {}
        self.dirty = False
        self.first_prompt = None

    def identity(self):
        return f"sam2(variant={self.variant},checkpoint={os.path.basename(self.checkpoint)},device={self.device})"

    def opened(self):
        return {
            "status": "opened",
            "identity": self.identity(),
            "capabilities": {"points": True, "boxes": True, "masks": True, "per_object_memory": True},
            "frame_count": self.frame_count,
            "runtime_info": {
                "multimask_output": "single mask for box and mask prompts, best of three for one click",
                "resolution": "original" if not self.resize else f"{self.resize[0]}x{self.resize[1]}",
            },
        }

    def scale(self, x, y):
        if not self.resize:
            return x, y
        return x * self.resize[0] / self.width, y * self.resize[1] / self.height

    def add_prompts(self, frame_index, prompts):
        np = self.np
        for p in prompts:
            obj, pts = p["object_id"], p.get("points", [])
            if p.get("mask") is not None:
                mask = decode_mask(p["mask"], np)
                if self.resize:
                    img = self.Image.fromarray(mask.astype(np.uint8) * 255).resize(self.resize, self.Image.NEAREST)
                    mask = np.asarray(img) > 127
                self.predictor.add_new_mask(self.state, frame_idx=frame_index, obj_id=obj, mask=mask)
            clicks, labels, box = [], [], None
            i = 0
            while i < len(pts):
                x, y, label = pts[i]
                if label == BOX_TOP_LEFT:
                    if i + 1 >= len(pts) or pts[i + 1][2] != BOX_BOTTOM_RIGHT:
                        raise Failure("Protocol", "box corner 2 not followed by 3")
                    x1, y1 = self.scale(x, y)
                    x2, y2 = self.scale(pts[i + 1][0], pts[i + 1][1])
                    box = np.array([x1, y1, x2, y2], dtype=np.float32)
                    i += 2
                    continue
                if label not in (0, 1):
                    raise Failure("Protocol", f"unexpected point label {label}")
                clicks.append(self.scale(x, y))
                labels.append(label)
                i += 1
            if clicks or box is not None:
                self.predictor.add_new_points_or_box(
                    self.state,
                    frame_idx=frame_index,
                    obj_id=obj,
                    points=np.array(clicks, dtype=np.float32) if clicks else None,
                    labels=np.array(labels, dtype=np.int32) if labels else None,
                    box=box,
                )
        if self.first_prompt is None or frame_index < self.first_prompt:
            self.first_prompt = frame_index
        self.dirty = True

    def to_original(self, mask):
        if not self.resize:
            return mask
        img = self.Image.fromarray(mask.astype(self.np.uint8) * 255)
        return self.np.asarray(img.resize((self.width, self.height), self.Image.NEAREST)) > 127

    def propagate(self, frame_index):
        if self.first_prompt is None or frame_index < self.first_prompt:
            return []
        if self.dirty:
            self.cache = {}
            try:
                for f, obj_ids, logits in self.predictor.propagate_in_video(
                    self.state, start_frame_idx=self.first_prompt
                ):
                    self.cache[f] = {
                        int(o): self.to_original((logits[k] > 0.0).squeeze(0).cpu().numpy())
                        for k, o in enumerate(obj_ids)
                    }
            except self.torch.cuda.OutOfMemoryError as e:
                raise Failure("Resource", {"frame_index": frame_index, "message": str(e)})
            self.dirty = False
        masks = self.cache.get(frame_index, {})
        return [{"object_id": o, "mask": encode_mask(m)} for o, m in sorted(masks.items())]

    def reset(self):
        self.predictor.reset_state(self.state)
        self.cache, self.dirty, self.first_prompt = {}, False, None

    def auto_generate(self, config, width, height, rgb):
        from sam2.automatic_mask_generator import SAM2AutomaticMaskGenerator

        np = self.np
        image = np.frombuffer(rgb, dtype=np.uint8).reshape(height, width, 3)
        generator = SAM2AutomaticMaskGenerator(
            self.image_model,
            points_per_side=config["points_per_side"],
            pred_iou_thresh=config["mask_quality_threshold"],
            stability_score_thresh=config["stability_score_threshold"],
            stability_score_offset=config["stability_score_offset"],
            box_nms_thresh=config["nms_threshold"],
            crop_n_layers=config["crop_layers"],
            min_mask_region_area=config["min_mask_region_area"],
            use_m2m=config["mask_refinement"],
        )
        out = []
        for m in generator.generate(image):
            points = [[int(round(x)), int(round(y))] for x, y in m.get("point_coords", [])]
            out.append(
                {
                    "mask": encode_mask(np.asarray(m["segmentation"], dtype=bool)),
                    "points": points,
                    "predicted_quality": float(m["predicted_iou"]),
                    "stability_score": float(m["stability_score"]),
                }
            )
        return {"status": "candidates", "identity": self.identity(), "candidates": out}


def serve(inp, out):
    session = None
    while True:
        body = read_record(inp)
        if body is None:
            return
        try:
            req = json.loads(body)
        except ValueError as e:
            write_message(out, {"status": "error", "error": {"Protocol": f"bad json: {e}"}})
            continue
        op = req.get("op")
        try:
            if op == "close":
                return
            if op == "open":
                session = Session(req)
                reply = session.opened()
            elif session is None:
                raise Failure("Protocol", f"{op} before open")
            elif op == "add_prompts":
                session.add_prompts(req["frame_index"], req["prompts"])
                reply = {"status": "ok"}
            elif op == "propagate":
                f = req["frame_index"]
                if f >= session.frame_count:
                    raise Failure("FrameOutOfRange", {"frame_index": f, "frames": session.frame_count})
                reply = {"status": "masks", "masks": session.propagate(f)}
            elif op == "reset":
                session.reset()
                reply = {"status": "ok"}
            elif op == "auto_generate":
                rgb = read_record(inp)
                if rgb is None or len(rgb) != req["width"] * req["height"] * 3:
                    raise Failure("Protocol", "missing or short RGB record")
                reply = session.auto_generate(req["config"], req["width"], req["height"], rgb)
            else:
                raise Failure("Protocol", f"unknown op {op!r}")
        except Failure as e:
            reply = {"status": "error", "error": e.error}
        except Exception as e:  # noqa: BLE001 - report, keep serving
            reply = {"status": "error", "error": {"Runtime": f"{type(e).__name__}: {e}"}}
        write_message(out, reply)


def selftest():
    import numpy as np

    mask = np.zeros((4, 5), dtype=bool)
    mask[1:3, 2:4] = True
    doc = encode_mask(mask)
    assert doc == {"size": [4, 5], "counts": [9, 2, 2, 2, 5]}, doc
    assert (decode_mask(doc, np) == mask).all()
    print("ok")


if __name__ == "__main__":
    if "--selftest" in sys.argv:
        selftest()
    else:
        serve(sys.stdin.buffer, sys.stdout.buffer)
