"""Dense pre-collected peg patches over (category, grid pose)."""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (
    Pose2D,
    PoseGrid,
    SensorWindow,
    ShapeSpec,
    plate_mask,
    rasterize,
    wrap_angle,
)
from .sensing import read_patch, write_patch

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
PAIR_MEMO_LIMIT = 1 << 30  # bytes; larger banks compute pair distances without memoising
HOLE_MEMO_SIZE = 2048  # hole images whose distances to every entry are kept


def quantize(patch: np.ndarray, levels: int) -> np.ndarray | None:
    """Integer levels ``round(patch * levels)`` if the patch is exactly on that lattice, else None."""
    scaled = np.asarray(patch, dtype=np.float32) * np.float32(levels)
    q = np.rint(scaled)
    if not np.array_equal(q, scaled):
        return None
    return q.astype(np.uint8)


def pack_levels(q: np.ndarray, levels: int) -> np.ndarray:
    """Threshold planes ``q >= k`` for k = 1..levels, bit-packed to ``(..., levels, words)`` uint64."""
    lead = q.shape[:-2] if q.ndim > 2 else ()
    flat = q.reshape(*lead, -1)
    n = flat.shape[-1]
    nbytes = -(-n // 64) * 8
    out = np.zeros((*lead, levels, nbytes), dtype=np.uint8)
    for k in range(1, levels + 1):
        bits = np.packbits(flat >= k, axis=-1, bitorder="little")
        out[..., k - 1, : bits.shape[-1]] = bits
    return out.view(np.uint64)


def packed_l1(a: np.ndarray, b: np.ndarray, levels: int) -> np.ndarray:
    """L1 distance between packed patches (broadcasting over leading axes)."""
    x = np.bitwise_xor(a, b)
    return np.bitwise_count(x).sum(axis=(-2, -1), dtype=np.int64) / levels


class _Axis:
    """Nearest-value lookup along one grid axis; half a step past either end counts as on-grid."""

    def __init__(self, values):
        self.vals = np.asarray(values, dtype=float)
        steps = np.diff(self.vals)
        self.uniform = len(steps) > 0 and np.allclose(steps, steps[0], rtol=0, atol=1e-9)

    def nearest(self, v: np.ndarray):
        vals = self.vals
        if len(vals) == 1:
            return np.zeros(v.shape, dtype=np.int64), np.abs(v - vals[0]) <= 1e-9
        if self.uniform:
            step = vals[1] - vals[0]
            u = (v - vals[0]) / step
            # ties go to the lower grid value
            j = np.clip(np.ceil(u - 0.5), 0, len(vals) - 1).astype(np.int64)
            return j, (u >= -0.5) & (u <= len(vals) - 0.5)
        j = np.clip(np.searchsorted(vals, v), 1, len(vals) - 1)
        left, right = vals[j - 1], vals[j]
        j = np.where(v - left <= right - v, j - 1, j)
        lo = vals[0] - (vals[1] - vals[0]) / 2
        hi = vals[-1] + (vals[-1] - vals[-2]) / 2
        return j, (v >= lo) & (v <= hi)


@dataclass(eq=False)
class PegImageBank:
    """Peg patches for every (category, grid pose), plus a trailing no-contact row.

    Flat entry index ``i = ((c * nx + ix) * ny + iy) * nt + it``; index
    ``n_entries`` is the all-zero no-contact image used for off-bank poses.
    """

    categories: tuple[str, ...]
    grid: PoseGrid
    window: SensorWindow
    patches: np.ndarray  # (n_entries + 1, rows, cols) float32
    supersample: int = 2
    plate_margin: float | None = None
    plates: np.ndarray | None = None
    shapes: dict[str, ShapeSpec] = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        if self.patches.shape != (self.n_entries + 1, *self.window.shape):
            raise ValueError(
                f"bank patches {self.patches.shape} do not match "
                f"{len(self.categories)} categories x {len(self.grid)} poses at {self.window.shape}"
            )
        if np.any(self.patches[-1]):
            raise ValueError("last bank row must be the no-contact image")
        self._cat_index = {c: i for i, c in enumerate(self.categories)}
        self._grid_poses = self.grid.poses_array()
        self.flat = self.patches.reshape(len(self.patches), -1)
        self.mass = self.flat.sum(axis=1, dtype=np.float64)
        self._packed = None
        self._pair_memo = None
        self._hole_memo: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._axes = [_Axis(v) for v in (self.grid.x_values, self.grid.y_values, self.grid.theta_values)]

    # -- construction ----------------------------------------------------
    @classmethod
    def build(
        cls,
        shapes: Sequence[ShapeSpec],
        grid: PoseGrid,
        window: SensorWindow = SensorWindow(),
        supersample: int = 2,
        plate_margin: float | None = None,
    ) -> "PegImageBank":
        poses = grid.poses()
        n = len(shapes) * len(poses)
        patches = np.zeros((n + 1, *window.shape), dtype=np.float32)
        plates = None if plate_margin is None else np.ones_like(patches)
        i = 0
        for shape in shapes:
            for pose in poses:
                patches[i] = rasterize(shape, pose, window, supersample)
                if plates is not None:
                    plates[i] = plate_mask(shape, pose, window, plate_margin, supersample)
                i += 1
        return cls(
            tuple(s.category_id for s in shapes),
            grid,
            window,
            patches,
            supersample=supersample,
            plate_margin=plate_margin,
            plates=plates,
            shapes={s.category_id: s for s in shapes},
        )

    # -- indexing ----------------------------------------------------------
    @property
    def n_entries(self) -> int:
        return len(self.categories) * len(self.grid)

    @property
    def no_contact_index(self) -> int:
        return self.n_entries

    @property
    def levels(self) -> int:
        return self.supersample * self.supersample

    def __len__(self) -> int:
        return self.n_entries

    def category_index(self, category: str) -> int:
        try:
            return self._cat_index[category]
        except KeyError:
            raise KeyError(f"category {category!r} not in bank") from None

    def entry(self, i: int) -> tuple[str, Pose2D]:
        if not 0 <= i < self.n_entries:
            raise IndexError(f"bank index {i} out of range")
        c, g = divmod(int(i), len(self.grid))
        return self.categories[c], Pose2D(*self._grid_poses[g])

    def entry_categories(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.categories)), len(self.grid))

    def entry_poses(self) -> np.ndarray:
        return np.tile(self._grid_poses, (len(self.categories), 1))

    def lookup(self, cats: np.ndarray, poses: np.ndarray) -> np.ndarray:
        """Bank index of the nearest grid pose; beyond the grid → no-contact index."""
        cats = np.asarray(cats, dtype=np.int64)
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        ix, okx = self._axes[0].nearest(poses[:, 0])
        iy, oky = self._axes[1].nearest(poses[:, 1])
        it, okt = self._axes[2].nearest(wrap_angle(poses[:, 2]))
        nx, ny, nt = self.grid.dims
        idx = ((cats * nx + ix) * ny + iy) * nt + it
        return np.where(okx & oky & okt, idx, self.no_contact_index)

    def lookup_outer(self, cats: np.ndarray, poses: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """``lookup`` of every pose translated by every shift (world-frame moves), shape ``(n_poses, n_shifts)``.

        Each axis is resolved once per distinct (value, shift) pair, which keeps this
        cheap when both come from the grid lattice.
        """
        cats = np.asarray(cats, dtype=np.int64)
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
        acc = cats[:, None]
        ok = np.ones((len(poses), len(shifts)), dtype=bool)
        for k, (axis, dim) in enumerate(zip(self._axes, self.grid.dims)):
            pv, pi = np.unique(poses[:, k], return_inverse=True)
            sv, si = np.unique(shifts[:, k], return_inverse=True)
            total = pv[:, None] + sv[None, :]
            if k == 2:
                total = wrap_angle(total)
            j, okk = axis.nearest(total)
            sel = (pi.reshape(-1, 1), si.reshape(1, -1))
            acc = acc * dim + j[sel]
            ok &= okk[sel]
        return np.where(ok, acc, self.no_contact_index)

    def index_of(self, category: str, pose: Pose2D) -> int:
        return int(self.lookup([self.category_index(category)], [pose.as_tuple()])[0])

    def patch(self, i: int) -> np.ndarray:
        return self.patches[i]

    # -- fast comparisons ------------------------------------------------------
    @property
    def packed(self) -> np.ndarray | None:
        """Bit-packed threshold planes of every row, or None if patches are not on the level lattice."""
        if self._packed is None:
            chunks = []
            for s in range(0, len(self.patches), 512):
                q = quantize(self.patches[s : s + 512], self.levels)
                if q is None:
                    self._packed = False
                    return None
                chunks.append(pack_levels(q, self.levels))
            self._packed = np.concatenate(chunks)
        return self._packed if self._packed is not False else None

    def pair_l1(self, ia, ib) -> np.ndarray:
        """L1 distance between bank rows ``ia`` and ``ib`` (broadcast)."""
        units = self.pair_l1_units(ia, ib)
        if units is None:
            ia, ib = np.broadcast_arrays(np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64))
            return np.abs(self.flat[ia] - self.flat[ib]).sum(axis=-1, dtype=np.float64)
        return units / self.levels

    def pair_l1_units(self, ia, ib) -> np.ndarray | None:
        """Exact ``L1 * levels`` between rows on the bit-packed path, else None.

        Results are memoised in a dense symmetric table filled on demand.
        """
        packed = self.packed
        if packed is None:
            return None
        ia, ib = np.broadcast_arrays(np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64))
        n = len(self.patches)
        dtype = np.uint16 if self.window.n_cells * self.levels < 0xFFFF else np.uint32
        if self._pair_memo is None:
            if n * n * np.dtype(dtype).itemsize > PAIR_MEMO_LIMIT:
                return np.bitwise_count(packed[ia] ^ packed[ib]).sum(axis=(-2, -1), dtype=np.int64)
            self._pair_memo = np.full((n, n), np.iinfo(dtype).max, dtype=dtype)
            # the no-contact row is all zeros, so its distance to any row is that row's mass
            units = np.rint(self.mass * self.levels).astype(dtype)
            self._pair_memo[-1, :] = units
            self._pair_memo[:, -1] = units
        memo, unset = self._pair_memo, np.iinfo(dtype).max
        v = memo[ia, ib]
        miss = v == unset
        if miss.any():
            keys = np.unique(ia[miss] * n + ib[miss])
            rows = packed.reshape(n, -1)
            # small chunks keep the gathered rows in cache
            for s in range(0, len(keys), 256):
                ka, kb = np.divmod(keys[s : s + 256], n)
                x = rows[ka]
                np.bitwise_xor(x, rows[kb], out=x)
                d = np.bitwise_count(x).sum(axis=1, dtype=dtype)
                memo[ka, kb] = d
                memo[kb, ka] = d
            v[miss] = memo[ia[miss], ib[miss]]
        return v

    def mating_agreement_units(self, q: np.ndarray, idx=None) -> np.ndarray:
        """Per entry, ``levels`` times the count of cells where a quantised hole agrees with the peg's complement.

        ``q`` holds integer levels (see :func:`quantize`).  Whole-bank results for the
        most recent holes are memoised, since episodes revisit the same noiseless
        holes; a short ``idx`` is answered for those rows only.
        """
        key = hashlib.sha1(np.ascontiguousarray(q, dtype=np.uint8).tobytes()).digest()
        hit = self._hole_memo.get(key)
        if hit is not None:
            self._hole_memo.move_to_end(key)
            return hit if idx is None else hit[np.asarray(idx)]
        # plane j of (1 - p) is NOT plane L+1-j of p, so reversing the hole's planes
        # turns popcount(xor) into the count of agreeing cells
        hp = pack_levels(q, self.levels)[::-1].reshape(-1)
        rows = self.packed.reshape(len(self.patches), -1)
        if idx is not None and np.size(idx) * 8 < len(rows):
            x = rows[np.asarray(idx)]
            np.bitwise_xor(x, hp, out=x)
            return np.bitwise_count(x).sum(axis=-1, dtype=np.int64)
        out = np.empty(len(self.patches), dtype=np.int64)
        for s in range(0, len(rows), 1024):
            x = rows[s : s + 1024] ^ hp
            out[s : s + 1024] = np.bitwise_count(x).sum(axis=1, dtype=np.int64)
        out.flags.writeable = False
        self._hole_memo[key] = out
        if len(self._hole_memo) > HOLE_MEMO_SIZE:
            self._hole_memo.popitem(last=False)
        return out if idx is None else out[np.asarray(idx)]

    def complement(self, idx) -> np.ndarray:
        """Plate minus peg for the given rows, flattened."""
        peg = self.flat[idx]
        if self.plates is None:
            return np.float32(1.0) - peg
        return np.clip(self.plates.reshape(len(self.plates), -1)[idx] - peg, 0.0, 1.0)

    # -- persistence -------------------------------------------------------------
    def manifest(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "categories": list(self.categories),
            "pose_grid": self.grid.to_dict(),
            "window": {
                "width_mm": self.window.width_mm,
                "height_mm": self.window.height_mm,
                "cols": self.window.cols,
                "rows": self.window.rows,
            },
            "supersample": self.supersample,
            "plate_margin": self.plate_margin,
            "entries": self.n_entries,
            "shapes": [self.shapes[c].to_dict() for c in self.categories if c in self.shapes],
            "digest": self.digest(),
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.patches, dtype="<f4").tobytes())
        if self.plates is not None:
            h.update(np.ascontiguousarray(self.plates, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i in range(self.n_entries):
            cat, pose = self.entry(i)
            meta = {"index": i, "category": cat, "x": pose.x, "y": pose.y, "theta": pose.theta}
            write_patch(d / f"entry_{i:06d}.tfp", self.patches[i], meta)
            if self.plates is not None:
                write_patch(d / f"plate_{i:06d}.tfp", self.plates[i])
        (d / MANIFEST).write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return d / MANIFEST

    @classmethod
    def load(cls, directory: str | Path) -> "PegImageBank":
        d = Path(directory)
        man = json.loads((d / MANIFEST).read_text())
        if man.get("format") != FORMAT_VERSION:
            raise ValueError(f"{d}: unsupported bank format {man.get('format')!r}")
        window = SensorWindow(**man["window"])
        grid = PoseGrid.from_dict(man["pose_grid"])
        n = int(man["entries"])
        if n != len(man["categories"]) * len(grid):
            raise ValueError(f"{d}: entry count does not match categories x pose grid")
        patches = np.zeros((n + 1, *window.shape), dtype=np.float32)
        plates = None if man["plate_margin"] is None else np.ones_like(patches)
        for i in range(n):
            p = read_patch(d / f"entry_{i:06d}.tfp")
            if p.shape != window.shape:
                raise ValueError(f"{d}: entry {i} resolution {p.shape} != {window.shape}")
            patches[i] = p
            if plates is not None:
                plates[i] = read_patch(d / f"plate_{i:06d}.tfp")
        shapes = {s["category_id"]: ShapeSpec.from_dict(s) for s in man.get("shapes", [])}
        bank = cls(
            tuple(man["categories"]),
            grid,
            window,
            patches,
            supersample=int(man["supersample"]),
            plate_margin=man["plate_margin"],
            plates=plates,
            shapes=shapes,
        )
        if bank.digest() != man["digest"]:
            raise ValueError(f"{d}: patch digest mismatch")
        return bank

    def subset(self, categories: Sequence[str]) -> "PegImageBank":
        """Bank restricted to ``categories`` (in the given order)."""
        P = len(self.grid)
        rows = np.concatenate([np.arange(P) + self.category_index(c) * P for c in categories])
        rows = np.append(rows, self.no_contact_index)
        return PegImageBank(
            tuple(categories),
            self.grid,
            self.window,
            self.patches[rows].copy(),
            supersample=self.supersample,
            plate_margin=self.plate_margin,
            plates=None if self.plates is None else self.plates[rows].copy(),
            shapes={c: self.shapes[c] for c in categories if c in self.shapes},
        )
