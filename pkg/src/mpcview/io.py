"""File formats: PFM/PPM images, rig JSON, binary volume containers and sequence directories.

All binary containers are little-endian. Readers validate headers before
touching the payload and refuse to allocate more than ``max_bytes``.
"""

from __future__ import annotations

import json
import math
import os
import re
import struct
from pathlib import Path

import numpy as np

from .aggregate import CostVolume, DensityVolume, FeatureVolume
from .errors import FormatError, RejectedInput
from .geometry import CameraModel, Intrinsics, Pose
from .simulator import Bundle, Frame, FrameSequence
from .volume import MpcDepthVolume, SweepDepthVolume

MAX_BYTES = 1 << 30
ROLES = ("input", "novel", "groundtruth")

VOLUME_MAGIC = b"MPCV"
FEATURE_MAGIC = b"FCV1"
FORMAT_VERSION = 1
# Payload kinds inside an FCV1 container.
KIND_FEATURE, KIND_COST, KIND_DENSITY = 0, 1, 2


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def _check_size(nbytes, max_bytes, offset):
    if nbytes > max_bytes:
        raise FormatError(f"declared payload of {nbytes} bytes exceeds the {max_bytes}-byte cap", offset)


def _payload(data, offset, nbytes, what):
    end = offset + nbytes
    if len(data) < end:
        raise FormatError(f"truncated {what}: expected {nbytes} bytes, found {len(data) - offset}", len(data))
    return data[offset:end], end


# --- PNM-style headers ---------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


def _header_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens; comments allowed."""
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("malformed header", pos)
        out.append((m.group(1), m.start(1)))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise FormatError("header not terminated by whitespace", pos)
    return out, pos + 1


def _positive_int(token, offset, what):
    try:
        v = int(token)
    except ValueError:
        raise FormatError(f"{what} is not an integer: {token!r}", offset) from None
    if v <= 0:
        raise FormatError(f"{what} must be positive, got {v}", offset)
    return v


def write_pfm(path, image):
    """Little-endian PFM; ``Pf`` for (H, W), ``PF`` for (H, W, 3)."""
    image = np.asarray(image)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise RejectedInput(f"PFM holds (H, W) or (H, W, 3) arrays, got {image.shape}")
    data = image.astype("<f4")
    if np.isinf(data).any():
        raise RejectedInput("PFM values must be finite or NaN")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode())
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path, max_bytes=MAX_BYTES):
    data = _read_bytes(path)
    if data[:2] not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {data[:2]!r}", 0)
    channels = 1 if data[:2] == b"Pf" else 3
    tokens, start = _header_tokens(data[2:], 3)
    (wt, wo), (ht, ho), (st, so) = tokens
    w = _positive_int(wt, wo + 2, "width")
    h = _positive_int(ht, ho + 2, "height")
    try:
        scale = float(st)
    except ValueError:
        raise FormatError(f"bad PFM scale {st!r}", so + 2) from None
    if scale == 0 or not math.isfinite(scale):
        raise FormatError("PFM scale must be finite and non-zero", so + 2)
    start += 2
    nbytes = w * h * channels * 4
    _check_size(nbytes, max_bytes, start)
    raw, end = _payload(data, start, nbytes, "PFM raster")
    if end != len(data):
        raise FormatError(f"{len(data) - end} trailing bytes after PFM raster", end)
    arr = np.frombuffer(raw, dtype="<f4" if scale < 0 else ">f4").astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)[::-1].copy()


def write_ppm(path, image):
    """Binary P6 with maxval 255; values in [0, 1] are stored as ``round(v * 255)``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise RejectedInput(f"PPM holds (H, W, 3) images, got {image.shape}")
    if not np.isfinite(image).all():
        raise RejectedInput("PPM values must be finite")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(q.tobytes())


def read_ppm(path, max_bytes=MAX_BYTES):
    data = _read_bytes(path)
    if data[:2] != b"P6":
        raise FormatError(f"bad PPM magic {data[:2]!r}", 0)
    tokens, start = _header_tokens(data[2:], 3)
    (wt, wo), (ht, ho), (mt, mo) = tokens
    w = _positive_int(wt, wo + 2, "width")
    h = _positive_int(ht, ho + 2, "height")
    maxval = _positive_int(mt, mo + 2, "maxval")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", mo + 2)
    start += 2
    nbytes = w * h * 3
    _check_size(nbytes, max_bytes, start)
    raw, end = _payload(data, start, nbytes, "PPM raster")
    if end != len(data):
        raise FormatError(f"{len(data) - end} trailing bytes after PPM raster", end)
    return np.frombuffer(raw, np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


# --- rig calibration ------------------------------------------------------

def _num(x):
    # 17 significant digits round-trip any double exactly.
    x = float(x)
    if not math.isfinite(x):
        raise RejectedInput(f"calibration values must be finite, got {x}")
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return format(x, ".17g")


def rig_to_json(cameras):
    lines = []
    for cam in cameras:
        k = cam.intrinsics
        fields = [
            f'"id": {json.dumps(cam.id)}',
            *(f'"{n}": {_num(getattr(k, n))}' for n in ("fx", "fy", "cx", "cy")),
            f'"width": {int(k.width)}',
            f'"height": {int(k.height)}',
            '"rotation": [' + ", ".join(_num(v) for v in cam.pose.rotation.ravel()) + "]",
            '"translation": [' + ", ".join(_num(v) for v in cam.pose.translation) + "]",
            f'"role": {json.dumps(cam.role)}',
        ]
        lines.append("    {" + ", ".join(fields) + "}")
    return '{\n  "cameras": [\n' + ",\n".join(lines) + "\n  ]\n}\n"


def write_rig(path, cameras):
    ids = [c.id for c in cameras]
    if len(set(ids)) != len(ids):
        raise RejectedInput("camera ids must be unique")
    Path(path).write_text(rig_to_json(cameras))


def rig_from_dict(doc):
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise RejectedInput("rig document needs a 'cameras' array")
    cams = []
    seen = set()
    for i, c in enumerate(doc["cameras"]):
        cid = c.get("id", f"#{i}") if isinstance(c, dict) else f"#{i}"
        try:
            if not isinstance(c, dict):
                raise RejectedInput("entry is not an object")
            missing = {"id", "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"} - set(c)
            if missing:
                raise RejectedInput(f"missing fields {sorted(missing)}")
            role = c.get("role", "input")
            if role not in ROLES:
                raise RejectedInput(f"unknown role {role!r}")
            if len(c["rotation"]) != 9 or len(c["translation"]) != 3:
                raise RejectedInput("rotation needs 9 numbers and translation 3")
            if cid in seen:
                raise RejectedInput("duplicate camera id")
            intr = Intrinsics(c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"])
            pose = Pose(np.reshape(np.asarray(c["rotation"], dtype=np.float64), (3, 3)), c["translation"])
        except (RejectedInput, TypeError, ValueError) as e:
            raise RejectedInput(f"camera {cid!r}: {e}") from None
        seen.add(cid)
        cams.append(CameraModel(intr, pose, str(cid), role))
    return cams


def read_rig(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"rig is not valid JSON: {e.msg}", e.pos) from None
    return rig_from_dict(doc)


# --- volume containers ----------------------------------------------------

def _pack_validity(valid):
    return np.packbits(np.asarray(valid, bool).ravel(), bitorder="little").tobytes()


def _unpack_validity(raw, count):
    return np.unpackbits(np.frombuffer(raw, np.uint8), count=count, bitorder="little").astype(bool)


def volume_bytes(volume):
    """Serialize an MPC or sweep depth volume (a sweep is stored as K = 1)."""
    if isinstance(volume, SweepDepthVolume):
        depths = volume.depths[None]
    elif isinstance(volume, MpcDepthVolume):
        depths = volume.depths
    else:
        raise RejectedInput(f"cannot serialize {type(volume).__name__} as a depth volume")
    k, n, h, w = depths.shape
    d32 = depths.astype("<f4")
    valid = np.isfinite(d32) & (d32 > 0)
    header = VOLUME_MAGIC + struct.pack("<5I", FORMAT_VERSION, k, n, h, w)
    header += np.asarray(volume.offsets, "<f4").tobytes()
    return header + np.where(valid, d32, np.float32(np.nan)).astype("<f4").tobytes() + _pack_validity(valid)


def _header(data, magic, count):
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}", 0)
    need = 4 + 4 * count
    if len(data) < need:
        raise FormatError(f"truncated header: expected {need} bytes, found {len(data)}", len(data))
    fields = struct.unpack_from(f"<{count}I", data, 4)
    if fields[0] != FORMAT_VERSION:
        raise FormatError(f"unsupported version {fields[0]}", 4)
    return fields[1:], need


def volume_from_bytes(data, max_bytes=MAX_BYTES, camera=None, view_ids=None):
    (k, n, h, w), pos = _header(data, VOLUME_MAGIC, 5)
    if n == 0:
        raise FormatError("volume declares zero offsets", 8)
    cells = k * n * h * w
    _check_size(4 * n + 4 * cells + (cells + 7) // 8, max_bytes, pos)
    raw, pos = _payload(data, pos, 4 * n, "offset table")
    offsets = tuple(float(x) for x in np.frombuffer(raw, "<f4"))
    raw, pos = _payload(data, pos, 4 * cells, "depth payload")
    depths = np.frombuffer(raw, "<f4").astype(np.float64).reshape(k, n, h, w)
    raw, pos = _payload(data, pos, (cells + 7) // 8, "validity bits")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after volume", pos)
    valid = _unpack_validity(raw, cells).reshape(depths.shape)
    depths = np.where(valid, depths, np.nan)
    ids = tuple(view_ids) if view_ids is not None else tuple(f"view{i}" for i in range(k))
    return MpcDepthVolume(depths, offsets, ids, camera)


def feature_bytes(volume):
    if isinstance(volume, FeatureVolume):
        kind, vals, counts = KIND_FEATURE, volume.values, volume.view_count
    elif isinstance(volume, CostVolume):
        kind, vals, counts = KIND_COST, volume.values[..., None], volume.view_count
    elif isinstance(volume, DensityVolume):
        kind, vals, counts = KIND_DENSITY, volume.values[..., None], None
    else:
        raise RejectedInput(f"cannot serialize {type(volume).__name__} as FCV1")
    l, h, w, f = vals.shape
    out = FEATURE_MAGIC + struct.pack("<6I", FORMAT_VERSION, kind, l, h, w, f) + vals.astype("<f4").tobytes()
    if counts is not None:
        out += np.asarray(counts, np.uint8).tobytes()
    return out


def feature_from_bytes(data, max_bytes=MAX_BYTES):
    (kind, l, h, w, f), pos = _header(data, FEATURE_MAGIC, 6)
    if kind not in (KIND_FEATURE, KIND_COST, KIND_DENSITY):
        raise FormatError(f"unknown FCV1 payload kind {kind}", 8)
    if kind != KIND_FEATURE and f != 1:
        raise FormatError("cost and density payloads have exactly one channel", 24)
    cells = l * h * w
    has_counts = kind != KIND_DENSITY
    _check_size(4 * cells * f + (cells if has_counts else 0), max_bytes, pos)
    raw, pos = _payload(data, pos, 4 * cells * f, "value payload")
    vals = np.frombuffer(raw, "<f4").astype(np.float32).reshape(l, h, w, f)
    counts = None
    if has_counts:
        raw, pos = _payload(data, pos, cells, "view counts")
        counts = np.frombuffer(raw, np.uint8).reshape(l, h, w).copy()
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after volume", pos)
    if kind == KIND_FEATURE:
        return FeatureVolume(vals.copy(), counts)
    if kind == KIND_COST:
        return CostVolume(vals[..., 0].copy(), counts)
    return DensityVolume(vals[..., 0].copy())


def write_volume(path, volume):
    blob = feature_bytes(volume) if isinstance(volume, (FeatureVolume, CostVolume, DensityVolume)) else volume_bytes(volume)
    with open(path, "wb") as f:
        f.write(blob)


def read_volume(path, max_bytes=MAX_BYTES, **kw):
    """Read either container; the magic decides which."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if len(magic) < 4:
        raise FormatError("file too short for a volume header", len(magic))
    # Check the declared size against the file before reading it whole.
    size = os.path.getsize(path)
    if size > max_bytes + 4096:
        raise FormatError(f"file of {size} bytes exceeds the {max_bytes}-byte cap", 0)
    data = _read_bytes(path)
    if magic == VOLUME_MAGIC:
        return volume_from_bytes(data, max_bytes, **kw)
    if magic == FEATURE_MAGIC:
        return feature_from_bytes(data, max_bytes)
    raise FormatError(f"bad magic {magic!r}", 0)


# --- sequence directories -------------------------------------------------

class SequenceLayout:
    """Paths of a sequence directory.

    ``rig.json``, ``meta.json``, ``background/view_<k>.{pfm,ppm}``,
    ``frames/<t>/view_<k>.{pfm,ppm}`` and ``frames/<t>/gt_<g>.ppm``
    (plus ``gt_<g>.pfm`` holding the ray-cast depth used for depth metrics).
    """

    def __init__(self, root):
        self.root = Path(root)

    @property
    def rig(self):
        return self.root / "rig.json"

    @property
    def meta(self):
        return self.root / "meta.json"

    def background(self, k, ext):
        return self.root / "background" / f"view_{k}.{ext}"

    def frame_dir(self, t):
        return self.root / "frames" / str(t)

    def view(self, t, k, ext):
        return self.frame_dir(t) / f"view_{k}.{ext}"

    def gt(self, t, g, ext="ppm"):
        return self.frame_dir(t) / f"gt_{g}.{ext}"


def write_sequence(root, seq: FrameSequence, extra_meta=None):
    lay = SequenceLayout(root)
    inputs, targets = seq.input_cameras, seq.target_cameras
    (lay.root / "background").mkdir(parents=True, exist_ok=True)
    write_rig(lay.rig, seq.rig)
    if seq.background is not None:
        for k, cam in enumerate(inputs):
            write_pfm(lay.background(k, "pfm"), seq.background.depths[cam.id])
            write_ppm(lay.background(k, "ppm"), seq.background.colors[cam.id])
    for fr in seq.frames:
        lay.frame_dir(fr.t).mkdir(parents=True, exist_ok=True)
        for k, cam in enumerate(inputs):
            write_pfm(lay.view(fr.t, k, "pfm"), fr.inputs.depths[cam.id])
            write_ppm(lay.view(fr.t, k, "ppm"), fr.inputs.colors[cam.id])
        for g, cam in enumerate(targets):
            write_ppm(lay.gt(fr.t, g), fr.groundtruth.colors[cam.id])
            write_pfm(lay.gt(fr.t, g, "pfm"), fr.groundtruth.depths[cam.id])
    meta = dict(seq.meta)
    meta.update(extra_meta or {})
    lay.meta.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return lay


def read_meta(root):
    path = SequenceLayout(root).meta
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise RejectedInput(f"{path} is missing") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e.msg}", e.pos) from None


def read_frame(root, t, inputs, targets):
    lay = SequenceLayout(root)
    fin, fgt = Bundle(), Bundle()
    for k, cam in enumerate(inputs):
        for ext in ("pfm", "ppm"):
            if not lay.view(t, k, ext).exists():
                raise RejectedInput(f"frame {t}: missing {lay.view(t, k, ext).name} for view {cam.id!r}")
        fin.depths[cam.id] = read_pfm(lay.view(t, k, "pfm")).astype(np.float64)
        fin.colors[cam.id] = read_ppm(lay.view(t, k, "ppm"))
        _check_shape(fin.depths[cam.id], cam, t)
    for g, cam in enumerate(targets):
        if lay.gt(t, g).exists():
            fgt.colors[cam.id] = read_ppm(lay.gt(t, g))
        if lay.gt(t, g, "pfm").exists():
            fgt.depths[cam.id] = read_pfm(lay.gt(t, g, "pfm")).astype(np.float64)
    return Frame(t, fin, fgt)


def _check_shape(depth, cam, t):
    if depth.shape != cam.shape:
        raise RejectedInput(f"frame {t}: view {cam.id!r} is {depth.shape}, rig says {cam.shape}")


def read_sequence(root, frames=None):
    """Load a sequence directory; ``frames`` optionally limits which frames are read."""
    lay = SequenceLayout(root)
    if not lay.rig.exists():
        raise RejectedInput(f"{lay.rig} is missing")
    rig = read_rig(lay.rig)
    meta = read_meta(root)
    n = int(meta.get("num_frames", 0))
    present = sorted(int(p.name) for p in (lay.root / "frames").iterdir() if p.name.isdigit()) \
        if (lay.root / "frames").exists() else []
    if present != list(range(n)):
        raise RejectedInput(f"meta.json declares {n} frames but found directories {present[:5]}...")
    seq = FrameSequence(rig, [], None, meta)
    inputs, targets = seq.input_cameras, seq.target_cameras
    if lay.background(0, "pfm").exists():
        bg = Bundle()
        for k, cam in enumerate(inputs):
            bg.depths[cam.id] = read_pfm(lay.background(k, "pfm")).astype(np.float64)
            bg.colors[cam.id] = read_ppm(lay.background(k, "ppm"))
        seq.background = bg
    for t in (range(n) if frames is None else frames):
        seq.frames.append(read_frame(root, t, inputs, targets))
    return seq
