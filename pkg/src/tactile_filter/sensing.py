"""Simulated tactile observations and primitive patch comparisons."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose2D, SensorWindow, ShapeSpec, hole_rasterize, rasterize

PATCH_MAGIC = b"TFPATCH1"


@dataclass(frozen=True)
class NoiseModel:
    flip_prob: float = 0.0
    blur_radius: float = 0.0  # Gaussian sigma in pixels
    pose_jitter: tuple[float, float, float] = (0.0, 0.0, 0.0)  # sigma x mm, y mm, theta deg

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 1.0:
            raise ValueError("flip_prob must lie in [0, 1)")
        if self.blur_radius < 0 or any(s < 0 for s in self.pose_jitter):
            raise ValueError("noise scales must be non-negative")
        object.__setattr__(self, "pose_jitter", tuple(float(s) for s in self.pose_jitter))

    @property
    def is_null(self) -> bool:
        return self.flip_prob == 0 and self.blur_radius == 0 and not any(self.pose_jitter)


NOISELESS = NoiseModel()


def no_contact(window: SensorWindow = SensorWindow()) -> np.ndarray:
    return np.zeros(window.shape, dtype=np.float32)


def _observe(render, shape, pose, window, noise, rng_seed):
    noise = noise or NOISELESS
    if noise.is_null:
        return render(shape, pose, window)
    rng = np.random.default_rng(rng_seed)
    if any(noise.pose_jitter):
        sx, sy, st = noise.pose_jitter
        dx, dy, dt = rng.normal(0.0, 1.0, size=3) * (sx, sy, st)
        pose = Pose2D(pose.x + dx, pose.y + dy, pose.theta + dt)
    patch = render(shape, pose, window)
    return apply_pixel_noise(patch, noise.blur_radius, noise.flip_prob, rng)


def apply_pixel_noise(patch: np.ndarray, blur_radius: float, flip_prob: float, rng) -> np.ndarray:
    """Blur, then flip cells ``v -> 1 - v`` independently with ``flip_prob``."""
    out = np.asarray(patch, dtype=np.float32)
    if blur_radius > 0:
        out = ndimage.gaussian_filter(out, sigma=blur_radius, mode="nearest")
    if flip_prob > 0:
        flips = rng.random(out.shape) < flip_prob
        out = np.where(flips, np.float32(1.0) - out, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def observe_peg(
    shape: ShapeSpec,
    pose: Pose2D,
    window: SensorWindow = SensorWindow(),
    noise: NoiseModel | None = None,
    rng_seed=None,
) -> np.ndarray:
    """Peg patch with pose jitter, then blur, then per-cell flips."""
    return _observe(rasterize, shape, pose, window, noise, rng_seed)


def observe_hole(
    shape: ShapeSpec,
    pose: Pose2D,
    window: SensorWindow = SensorWindow(),
    noise: NoiseModel | None = None,
    rng_seed=None,
    margin_mm: float | None = None,
) -> np.ndarray:
    def render(s, p, w):
        return hole_rasterize(s, p, w, margin_mm=margin_mm)

    return _observe(render, shape, pose, window, noise, rng_seed)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"patch shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).sum())


def has_contact(patch: np.ndarray, delta_act: float) -> bool:
    """True iff the patch's L1 mass above the no-contact image strictly exceeds ``delta_act``."""
    if delta_act <= 0:
        raise ValueError("delta_act must be positive")
    return float(np.abs(np.asarray(patch, dtype=np.float64)).sum()) > delta_act


def default_delta_act(window: SensorWindow = SensorWindow()) -> float:
    """1% of the cell count."""
    return 0.01 * window.n_cells


# -- patch container --------------------------------------------------------

def write_patch(path: str | Path, patch: np.ndarray, meta: dict | None = None) -> None:
    """Write ``TFPATCH1`` + u32 rows + u32 cols + f32 cells (little-endian), plus a JSON sidecar."""
    patch = np.asarray(patch, dtype="<f4")
    rows, cols = patch.shape
    path = Path(path)
    path.write_bytes(PATCH_MAGIC + struct.pack("<II", rows, cols) + patch.tobytes(order="C"))
    if meta is not None:
        path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_patch(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != PATCH_MAGIC:
        raise ValueError(f"{path}: not a TFPATCH1 file")
    rows, cols = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != 4 * rows * cols:
        raise ValueError(f"{path}: truncated patch body")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


def read_patch_meta(path: str | Path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())
