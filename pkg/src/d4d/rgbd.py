"""RGBD sample container, preprocessing, synthetic scenes, merging, file I/O.

A sample is four planes in [0, 1]: three color channels plus one depth
channel normalized by a physical maximum range in meters. Datasets are
homogeneous (one resolution, one depth range) and carry a per-sample
provenance tag recording which pipeline produced the sample.

Dataset file layout (little-endian):

    magic 'R4DD' | u32 version=1 | u32 count | u32 width | u32 height
    | f32 max_depth_m | count * (u8 provenance | 4*H*W f32 planes R,G,B,D)

A JSON-lines manifest (index, provenance, seed) can be written alongside.
"""

import json
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, FormatError, ParameterError, ShapeError
from .rng import derive_seed, substream

MAGIC = b"R4DD"
VERSION = 1

PROVENANCE_CODES = {"original": 0, "s1": 1, "s2": 2}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE_CODES.items()}


@dataclass
class RgbdSample:
    """One 4-channel image: rgb planes (3, H, W) and a depth plane (H, W)."""

    rgb: np.ndarray
    depth: np.ndarray
    max_depth_m: float
    provenance: str = "original"
    seed: int | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ShapeError(f"rgb must be (3, H, W), got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[1:]:
            raise ShapeError(
                f"depth plane {self.depth.shape} does not match rgb planes {self.rgb.shape[1:]}"
            )
        if self.max_depth_m <= 0:
            raise ParameterError(f"max_depth_m must be positive, got {self.max_depth_m}")
        if self.provenance not in PROVENANCE_CODES:
            raise ParameterError(f"unknown provenance {self.provenance!r}")
        for name, plane in (("rgb", self.rgb), ("depth", self.depth)):
            lo, hi = float(plane.min(initial=0.0)), float(plane.max(initial=0.0))
            if lo < 0.0 or hi > 1.0:
                raise ParameterError(f"{name} values outside [0, 1]: range [{lo}, {hi}]")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def depth_meters(self) -> np.ndarray:
        return self.depth.astype(np.float64) * self.max_depth_m

    def channels(self) -> np.ndarray:
        """Planes stacked (4, H, W) in R, G, B, D order."""
        return np.concatenate([self.rgb, self.depth[None]], axis=0)


@dataclass
class RgbdDataset:
    """Ordered, homogeneous collection of RGBD samples."""

    width: int
    height: int
    max_depth_m: float
    samples: list[RgbdSample] = field(default_factory=list)

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            if (s.width, s.height) != (self.width, self.height):
                raise ShapeError(
                    f"sample {i} is {s.width}x{s.height}, dataset is {self.width}x{self.height}"
                )
            if s.max_depth_m != self.max_depth_m:
                raise ParameterError(
                    f"sample {i} has max depth {s.max_depth_m}, dataset has {self.max_depth_m}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def stack(self) -> np.ndarray:
        """All samples as one (N, 4, H, W) float32 array."""
        if not self.samples:
            return np.zeros((0, 4, self.height, self.width), dtype=np.float32)
        return np.stack([s.channels() for s in self.samples])

    def provenance_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in PROVENANCE_CODES}
        for s in self.samples:
            counts[s.provenance] += 1
        return counts


def dataset_from_array(
    arr: np.ndarray, max_depth_m: float, provenance: str = "original", seeds=None
) -> RgbdDataset:
    """Build a dataset from an (N, 4, H, W) array of [0, 1] planes."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1] != 4:
        raise ShapeError(f"expected (N, 4, H, W), got {arr.shape}")
    n, _, h, w = arr.shape
    samples = [
        RgbdSample(
            rgb=arr[i, :3],
            depth=arr[i, 3],
            max_depth_m=max_depth_m,
            provenance=provenance,
            seed=None if seeds is None else int(seeds[i]),
        )
        for i in range(n)
    ]
    return RgbdDataset(width=w, height=h, max_depth_m=max_depth_m, samples=samples)


# -- preprocessing ------------------------------------------------------------


def bilinear_resize(plane: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Resize one plane with half-pixel-center sampling and edge clamping.

    Arithmetic runs in float64; the result keeps the input dtype.
    """
    if target_w < 2 or target_h < 2:
        raise ParameterError(f"target size must be at least 2x2, got {target_w}x{target_h}")
    src_h, src_w = plane.shape
    if (target_w, target_h) == (src_w, src_h):
        return plane.copy()
    p = plane.astype(np.float64)
    xs = np.clip((np.arange(target_w) + 0.5) * (src_w / target_w) - 0.5, 0.0, src_w - 1.0)
    ys = np.clip((np.arange(target_h) + 0.5) * (src_h / target_h) - 0.5, 0.0, src_h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = xs - x0
    fy = ys - y0
    top = p[y0[:, None], x0[None, :]] * (1.0 - fx)[None, :] + p[y0[:, None], x1[None, :]] * fx[None, :]
    bottom = p[y1[:, None], x0[None, :]] * (1.0 - fx)[None, :] + p[y1[:, None], x1[None, :]] * fx[None, :]
    out = top * (1.0 - fy)[:, None] + bottom * fy[:, None]
    return out.astype(plane.dtype)


def preprocess(sample: RgbdSample, target_res: tuple[int, int]) -> RgbdSample:
    """Resize all four planes to (width, height) and re-clamp to [0, 1]."""
    tw, th = target_res
    if tw < 2 or th < 2:
        raise ParameterError(f"degenerate target resolution {tw}x{th}")
    if (tw, th) == (sample.width, sample.height):
        return replace(sample, rgb=sample.rgb.copy(), depth=sample.depth.copy())
    rgb = np.stack([bilinear_resize(sample.rgb[c], tw, th) for c in range(3)])
    depth = bilinear_resize(sample.depth, tw, th)
    return replace(sample, rgb=np.clip(rgb, 0.0, 1.0), depth=np.clip(depth, 0.0, 1.0))


# -- synthetic scenes ----------------------------------------------------------


def _hue_for_depth(depth: np.ndarray) -> np.ndarray:
    """Fixed depth -> base color mapping (3, ...): a smooth hue wheel."""
    phase = 2.0 * np.pi * depth
    return np.stack(
        [
            0.5 + 0.5 * np.cos(phase),
            0.5 + 0.5 * np.cos(phase + 2.0 * np.pi / 3.0),
            0.5 + 0.5 * np.cos(phase + 4.0 * np.pi / 3.0),
        ]
    )


def synth_scene(
    width: int,
    height: int,
    n_shapes: int,
    seed: int,
    max_depth_m: float = 10.0,
    bg_depth: tuple[float, float] = (0.9, 0.4),
    shape_depth: tuple[float, float] = (0.05, 0.30),
    noise_amp: float = 0.02,
) -> RgbdSample:
    """Deterministic toy scene: a planar depth gradient plus nearer rectangles.

    The background depth falls strictly monotonically from the top row to the
    bottom row; rectangles sit at constant depths drawn from ``shape_depth``
    and carry the flat base color of the fixed depth->hue mapping. Background
    color gets a small seeded texture on top of the same mapping, keeping the
    color<->depth coupling that the generative model is meant to learn.
    """
    if n_shapes < 0:
        raise ParameterError(f"n_shapes must be >= 0, got {n_shapes}")
    if width < 4 or height < 4:
        raise ParameterError(f"scene must be at least 4x4, got {width}x{height}")
    rng = substream(seed, "synth-scene")

    rows = np.linspace(bg_depth[0], bg_depth[1], height, dtype=np.float64)
    depth = np.repeat(rows[:, None], width, axis=1)
    shape_mask = np.zeros((height, width), dtype=bool)

    placed = 0
    attempts = 0
    while placed < n_shapes and attempts < 50 * max(1, n_shapes):
        attempts += 1
        rw = int(rng.integers(2, max(3, width // 2) + 1))
        rh = int(rng.integers(2, max(3, height // 2) + 1))
        x = int(rng.integers(0, width - rw + 1))
        y = int(rng.integers(0, height - rh + 1))
        d = float(rng.uniform(shape_depth[0], shape_depth[1]))
        region = (slice(y, y + rh), slice(x, x + rw))
        if shape_mask[region].any():
            continue  # keep rectangles disjoint so interiors stay constant
        depth[region] = d
        shape_mask[region] = True
        placed += 1

    rgb = _hue_for_depth(depth)
    texture = rng.uniform(-noise_amp, noise_amp, size=rgb.shape)
    rgb = np.where(shape_mask[None], rgb, rgb + texture)
    return RgbdSample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=np.clip(depth, 0.0, 1.0).astype(np.float32),
        max_depth_m=max_depth_m,
        provenance="original",
        seed=seed,
    )


def make_synthetic_dataset(
    count: int,
    width: int,
    height: int,
    n_shapes: int,
    seed: int,
    max_depth_m: float = 10.0,
    **scene_kwargs,
) -> RgbdDataset:
    """A dataset of ``count`` independent scenes with per-sample derived seeds."""
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    samples = []
    for i in range(count):
        sample_seed = derive_seed(seed, f"synth/sample-{i}")
        samples.append(
            synth_scene(width, height, n_shapes, sample_seed, max_depth_m, **scene_kwargs)
        )
    return RgbdDataset(width=width, height=height, max_depth_m=max_depth_m, samples=samples)


# -- merging --------------------------------------------------------------------


def merge_s3(
    original: RgbdDataset | None,
    gen_s1: RgbdDataset,
    gen_s2: RgbdDataset,
    add_count: int,
    include_original: bool,
    seed: int,
) -> RgbdDataset:
    """Union of generated sets (half from each source) with optional originals.

    Takes ceil(add_count/2) samples from the first generated set and
    floor(add_count/2) from the second, appends the original samples when
    requested, and applies one seeded shuffle. Provenance tags are preserved.
    """
    if add_count < 0:
        raise ParameterError(f"add_count must be >= 0, got {add_count}")
    if include_original and original is None:
        raise ParameterError("include_original requires an original dataset")

    sets = [s for s in (original, gen_s1, gen_s2) if s is not None]
    ref = sets[0]
    for ds in sets[1:]:
        if (ds.width, ds.height) != (ref.width, ref.height):
            raise CapacityError(
                f"resolution mismatch: {ds.width}x{ds.height} vs {ref.width}x{ref.height}"
            )
        if ds.max_depth_m != ref.max_depth_m:
            raise CapacityError(
                f"max depth mismatch: {ds.max_depth_m} vs {ref.max_depth_m}"
            )

    need = (add_count + 1) // 2
    for name, ds in (("s1", gen_s1), ("s2", gen_s2)):
        if len(ds) < need:
            raise CapacityError(
                f"generated set {name} has {len(ds)} samples, need at least {need}"
            )

    take_s1 = (add_count + 1) // 2
    take_s2 = add_count // 2
    merged = []
    if include_original:
        merged.extend(original.samples)
    merged.extend(gen_s1.samples[:take_s1])
    merged.extend(gen_s2.samples[:take_s2])

    perm = substream(seed, "merge/shuffle").permutation(len(merged))
    merged = [merged[i] for i in perm]
    return RgbdDataset(
        width=ref.width, height=ref.height, max_depth_m=ref.max_depth_m, samples=merged
    )


# -- file I/O ---------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIf")


def write_dataset(dataset: RgbdDataset, path) -> None:
    """Serialize atomically (write temp file, then rename)."""
    path = os.fspath(path)
    blob = bytearray()
    blob += _HEADER.pack(
        MAGIC, VERSION, len(dataset), dataset.width, dataset.height, dataset.max_depth_m
    )
    for s in dataset.samples:
        blob += struct.pack("<B", PROVENANCE_CODES[s.provenance])
        blob += s.channels().astype("<f4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_dataset(path) -> RgbdDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for header", offset=len(raw))
    magic, version, count, width, height, max_depth = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    plane_bytes = 4 * height * width * 4
    sample_bytes = 1 + plane_bytes
    expected = _HEADER.size + count * sample_bytes
    if len(raw) < expected:
        raise FormatError(
            f"truncated: expected {expected} bytes, file has {len(raw)}", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError(f"trailing data after {count} samples", offset=expected)

    samples = []
    offset = _HEADER.size
    for _ in range(count):
        tag = raw[offset]
        if tag not in PROVENANCE_NAMES:
            raise FormatError(f"invalid provenance tag {tag}", offset=offset)
        offset += 1
        planes = np.frombuffer(raw, dtype="<f4", count=4 * height * width, offset=offset)
        offset += plane_bytes
        planes = planes.reshape(4, height, width)
        samples.append(
            RgbdSample(
                rgb=planes[:3].copy(),
                depth=planes[3].copy(),
                max_depth_m=max_depth,
                provenance=PROVENANCE_NAMES[tag],
            )
        )
    return RgbdDataset(width=width, height=height, max_depth_m=max_depth, samples=samples)


def write_manifest(dataset: RgbdDataset, path) -> None:
    """JSON-lines sidecar: one record per sample (index, provenance, seed)."""
    with open(path, "w") as fh:
        for i, s in enumerate(dataset.samples):
            fh.write(json.dumps({"index": i, "provenance": s.provenance, "seed": s.seed}) + "\n")
