"""Planar shapes, SE(2) poses, pose grids and the simulated sensor raster.

A pose ``(x, y, theta)`` places the sensor centre at ``(x, y)`` millimetres in
the shape frame, rotated by ``theta`` degrees.  A sensor pixel at sensor-frame
offset ``u`` therefore looks at the shape-frame point ``R(theta) @ u + (x, y)``.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised for degenerate or malformed shape outlines."""


def wrap_angle(deg):
    """Wrap degrees into (-180, 180].  Works on scalars and arrays."""
    r = np.mod(deg, 360.0)
    r = np.where(r > 180.0, r - 360.0, r)
    if np.ndim(r) == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class Action:
    """A planar displacement ``(dx, dy, dtheta)`` in mm / degrees."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dtheta"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def inverse(self) -> "Action":
        return Action(-self.dx, -self.dy, -self.dtheta)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dtheta)

    def magnitude(self) -> float:
        return abs(self.dx) + abs(self.dy) + abs(self.dtheta)

    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.dtheta == 0


IDENTITY = Action()


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def moved(self, a: Action, frame: str = "world") -> "Pose2D":
        """Apply ``a`` to this pose.

        ``frame="world"`` adds the displacement in the shape frame, which keeps
        grid poses on the grid-difference lattice.  ``frame="body"`` is the
        SE(2) composition that translates along the sensor's own axes first.
        """
        if frame == "world":
            return Pose2D(self.x + a.dx, self.y + a.dy, self.theta + a.dtheta)
        if frame == "body":
            c, s = math.cos(math.radians(self.theta)), math.sin(math.radians(self.theta))
            return Pose2D(
                self.x + c * a.dx - s * a.dy,
                self.y + s * a.dx + c * a.dy,
                self.theta + a.dtheta,
            )
        raise ValueError(f"unknown action frame {frame!r}")

    def unmoved(self, a: Action, frame: str = "world") -> "Pose2D":
        """The pose that :meth:`moved` would carry onto this one."""
        if frame == "world":
            return self.moved(a.inverse(), "world")
        prev = Pose2D(self.x, self.y, self.theta - a.dtheta)
        c, s = math.cos(math.radians(prev.theta)), math.sin(math.radians(prev.theta))
        return Pose2D(self.x - (c * a.dx - s * a.dy), self.y - (s * a.dx + c * a.dy), prev.theta)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def isclose(self, other: "Pose2D", tol: float = 1e-9) -> bool:
        return (
            abs(self.x - other.x) <= tol
            and abs(self.y - other.y) <= tol
            and abs(wrap_angle(self.theta - other.theta)) <= tol
        )


def move_poses(poses: np.ndarray, a: Action, frame: str = "world") -> np.ndarray:
    """Vectorised :meth:`Pose2D.moved` over an ``(n, 3)`` pose array."""
    out = np.array(poses, dtype=float, copy=True)
    if frame == "world":
        out[:, 0] += a.dx
        out[:, 1] += a.dy
    elif frame == "body":
        t = np.radians(out[:, 2])
        c, s = np.cos(t), np.sin(t)
        out[:, 0] += c * a.dx - s * a.dy
        out[:, 1] += s * a.dx + c * a.dy
    else:
        raise ValueError(f"unknown action frame {frame!r}")
    out[:, 2] = wrap_angle(out[:, 2] + a.dtheta)
    return out


@dataclass(frozen=True)
class SensorWindow:
    """Physical field of view and pixel resolution of the tactile sensor."""

    width_mm: float = 18.6
    height_mm: float = 14.3
    cols: int = 64
    rows: int = 48
    # Square-pixel tolerance.  The default 18.6 x 14.3 mm at 64 x 48 differs by ~2.5%.
    pitch_tolerance: float = 0.03

    def __post_init__(self):
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise ValueError("sensor window dimensions must be positive")
        if self.cols < 8 or self.rows < 8:
            raise ValueError("sensor window needs at least 8 x 8 pixels")
        px, py = self.pitch
        if abs(px - py) > self.pitch_tolerance * max(px, py):
            raise ValueError(f"non-square pixels: pitch {px:.4f} x {py:.4f} mm")

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.width_mm / self.cols, self.height_mm / self.rows)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)


@lru_cache(maxsize=16)
def _sample_offsets(window: SensorWindow, supersample: int) -> np.ndarray:
    """Sensor-frame sample points, shape ``(rows * cols * s * s, 2)``.

    Row 0 is the top of the image (+y), column 0 the left edge (-x).
    """
    px, py = window.pitch
    s = supersample
    sub = (np.arange(s) + 0.5) / s
    cx = (np.arange(window.cols)[:, None] + sub[None, :]) * px - window.width_mm / 2
    cy = window.height_mm / 2 - (np.arange(window.rows)[:, None] + sub[None, :]) * py
    # (rows, s, cols, s) grid of points
    X = np.broadcast_to(cx.reshape(1, 1, window.cols, s), (window.rows, s, window.cols, s))
    Y = np.broadcast_to(cy.reshape(window.rows, s, 1, 1), (window.rows, s, window.cols, s))
    pts = np.stack([X, Y], axis=-1).transpose(0, 2, 1, 3, 4)  # rows, cols, s, s, 2
    pts = np.ascontiguousarray(pts.reshape(-1, 2))
    pts.setflags(write=False)
    return pts


def points_in_loop(px: np.ndarray, py: np.ndarray, loop: np.ndarray) -> np.ndarray:
    """Even-odd crossing test of points against a closed polygon loop."""
    inside = np.zeros(px.shape, dtype=bool)
    x0, y0 = loop[-1]
    for x1, y1 in loop:
        if y0 != y1:
            crosses = (y0 > py) != (y1 > py)
            xint = (x1 - x0) * (py - y0) / (y1 - y0) + x0
            inside ^= crosses & (px < xint)
        x0, y0 = x1, y1
    return inside


@dataclass(frozen=True, eq=False)
class Polygon:
    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = ()

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        inside = points_in_loop(px, py, self.exterior)
        for h in self.holes:
            inside &= ~points_in_loop(px, py, h)
        return inside

    def loops(self) -> tuple[np.ndarray, ...]:
        return (self.exterior, *self.holes)


@dataclass(frozen=True, eq=False)
class Raster:
    """Binary occupancy grid centred on the shape origin."""

    pitch_mm: float
    data: np.ndarray  # bool (rows, cols), row 0 at +y

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        rows, cols = self.data.shape
        c = np.floor(px / self.pitch_mm + cols / 2).astype(np.int64)
        r = np.floor(rows / 2 - py / self.pitch_mm).astype(np.int64)
        ok = (c >= 0) & (c < cols) & (r >= 0) & (r < rows)
        out = np.zeros(px.shape, dtype=bool)
        out[ok] = self.data[r[ok], c[ok]]
        return out


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and min(
            a[1], b[1]
        ) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def _check_loop(loop: np.ndarray, what: str) -> None:
    if loop.ndim != 2 or loop.shape[1] != 2 or len(loop) < 3:
        raise ShapeError(f"{what}: need at least 3 (x, y) vertices")
    if not np.all(np.isfinite(loop)):
        raise ShapeError(f"{what}: non-finite vertex")
    x, y = loop[:, 0], loop[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if area <= 1e-12:
        raise ShapeError(f"{what}: zero-area loop")
    n = len(loop)
    for i in range(n):
        a1, a2 = loop[i], loop[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue  # adjacent edges share a vertex
            if _segments_cross(a1, a2, loop[j], loop[(j + 1) % n]):
                raise ShapeError(f"{what}: self-intersecting outline (edges {i} and {j})")


@dataclass(frozen=True, eq=False)
class ShapeSpec:
    """A peg cross-section.  Occupancy is the union of its polygons (or the raster)."""

    category_id: str
    polygons: tuple[Polygon, ...] = ()
    raster: Raster | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (not self.polygons) == (self.raster is None):
            raise ShapeError(f"{self.category_id}: give either polygons or a raster")
        for k, poly in enumerate(self.polygons):
            _check_loop(poly.exterior, f"{self.category_id} polygon {k}")
            for j, h in enumerate(poly.holes):
                _check_loop(h, f"{self.category_id} polygon {k} hole {j}")
        if self.raster is not None:
            if self.raster.pitch_mm <= 0:
                raise ShapeError(f"{self.category_id}: raster pitch must be positive")
            if not np.any(self.raster.data):
                raise ShapeError(f"{self.category_id}: raster has no occupied cell")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)`` in millimetres."""
        if self.raster is not None:
            rows, cols = self.raster.data.shape
            r, c = np.nonzero(self.raster.data)
            p = self.raster.pitch_mm
            return (
                (c.min() - cols / 2) * p,
                (rows / 2 - r.max() - 1) * p,
                (c.max() + 1 - cols / 2) * p,
                (rows / 2 - r.min()) * p,
            )
        pts = np.concatenate([p.exterior for p in self.polygons])
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

    @property
    def size(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0, y1 - y0)

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        if self.raster is not None:
            return self.raster.contains(px, py)
        inside = np.zeros(np.shape(px), dtype=bool)
        for poly in self.polygons:
            inside |= poly.contains(px, py)
        return inside

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        d: dict = {"category_id": self.category_id}
        if self.raster is not None:
            data = self.raster.data.astype(bool)
            d["raster"] = {
                "pitch_mm": self.raster.pitch_mm,
                "rows": int(data.shape[0]),
                "cols": int(data.shape[1]),
                "data": base64.b64encode(np.packbits(data.ravel()).tobytes()).decode("ascii"),
            }
        else:
            polys = []
            for p in self.polygons:
                pts = p.exterior.tolist()
                if p.holes:
                    polys.append({"points": pts, "holes": [h.tolist() for h in p.holes]})
                else:
                    polys.append(pts)
            d["polygons"] = polys
        d["bbox"] = [float(v) for v in self.bbox]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        try:
            cid = str(d["category_id"])
            if "raster" in d:
                r = d["raster"]
                rows, cols = int(r["rows"]), int(r["cols"])
                bits = np.frombuffer(base64.b64decode(r["data"]), dtype=np.uint8)
                data = np.unpackbits(bits)[: rows * cols].reshape(rows, cols).astype(bool)
                return cls(cid, raster=Raster(float(r["pitch_mm"]), data))
            polys = []
            for p in d["polygons"]:
                if isinstance(p, dict):
                    ext = np.asarray(p["points"], dtype=float)
                    holes = tuple(np.asarray(h, dtype=float) for h in p.get("holes", []))
                else:
                    ext, holes = np.asarray(p, dtype=float), ()
                polys.append(Polygon(ext, holes))
            return cls(cid, polygons=tuple(polys))
        except (KeyError, TypeError) as exc:
            raise ShapeError(f"malformed shape record: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ShapeSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rectangle(x0: float, y0: float, x1: float, y1: float) -> Polygon:
    return Polygon(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))


def union_shape(shapes: Sequence[ShapeSpec], category_id: str) -> ShapeSpec:
    """Merge polygonal shapes into one (occupancy is the union)."""
    polys = tuple(p for s in shapes for p in s.polygons)
    return ShapeSpec(category_id, polygons=polys)


# -- rasterisation -------------------------------------------------------

def _shape_frame_points(pose: Pose2D, window: SensorWindow, supersample: int):
    pts = _sample_offsets(window, supersample)
    t = math.radians(pose.theta)
    c, s = math.cos(t), math.sin(t)
    px = c * pts[:, 0] - s * pts[:, 1] + pose.x
    py = s * pts[:, 0] + c * pts[:, 1] + pose.y
    return px, py


def _to_patch(hit: np.ndarray, window: SensorWindow, supersample: int) -> np.ndarray:
    s2 = supersample * supersample
    counts = hit.reshape(window.rows, window.cols, s2).sum(axis=-1)
    return counts.astype(np.float32) / np.float32(s2)


def rasterize(
    shape: ShapeSpec, pose: Pose2D, window: SensorWindow = SensorWindow(), supersample: int = 2
) -> np.ndarray:
    """Peg contact patch seen with the sensor at ``pose``.

    Each pixel is the covered fraction of its ``supersample**2`` sub-samples,
    so values are multiples of ``1 / supersample**2`` in [0, 1].
    """
    px, py = _shape_frame_points(pose, window, supersample)
    return _to_patch(shape.contains(px, py), window, supersample)


def plate_mask(
    shape: ShapeSpec,
    pose: Pose2D,
    window: SensorWindow = SensorWindow(),
    margin_mm: float | None = None,
    supersample: int = 2,
) -> np.ndarray:
    """Solid plate around the hole; ``margin_mm=None`` means the plate fills the window."""
    if margin_mm is None:
        return np.ones(window.shape, dtype=np.float32)
    x0, y0, x1, y1 = shape.bbox
    px, py = _shape_frame_points(pose, window, supersample)
    hit = (px >= x0 - margin_mm) & (px < x1 + margin_mm) & (py >= y0 - margin_mm) & (py < y1 + margin_mm)
    return _to_patch(hit, window, supersample)


def hole_rasterize(
    shape: ShapeSpec,
    pose: Pose2D,
    window: SensorWindow = SensorWindow(),
    margin_mm: float | None = None,
    supersample: int = 2,
) -> np.ndarray:
    """Contact patch of the mating hole: plate material minus the peg cross-section."""
    plate = plate_mask(shape, pose, window, margin_mm, supersample)
    peg = rasterize(shape, pose, window, supersample)
    return np.clip(plate - peg, 0.0, 1.0)


# -- pose grids ------------------------------------------------------------

THETA_VALUES = tuple(range(-90, 91, 30))


@dataclass(frozen=True)
class PoseGrid:
    x_values: tuple[float, ...]
    y_values: tuple[float, ...]
    theta_values: tuple[float, ...]

    def __post_init__(self):
        for name in ("x_values", "y_values", "theta_values"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"pose grid axis {name} is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"pose grid axis {name} must be strictly increasing")
            object.__setattr__(self, name, vals)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (len(self.x_values), len(self.y_values), len(self.theta_values))

    def __len__(self) -> int:
        nx, ny, nt = self.dims
        return nx * ny * nt

    def poses_array(self) -> np.ndarray:
        """All grid poses as an ``(n, 3)`` array in (x, y, theta) C-order."""
        X, Y, T = np.meshgrid(self.x_values, self.y_values, self.theta_values, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), T.ravel()], axis=1)

    def poses(self) -> list[Pose2D]:
        return [Pose2D(*p) for p in self.poses_array()]

    def to_dict(self) -> dict:
        return {"x": list(self.x_values), "y": list(self.y_values), "theta": list(self.theta_values)}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseGrid":
        return cls(tuple(d["x"]), tuple(d["y"]), tuple(d["theta"]))


def make_pose_grid(kind: str = "small", x=None, y=None, theta=None) -> PoseGrid:
    if kind == "small":
        return PoseGrid(tuple(range(-8, 9, 4)), tuple(range(-8, 9, 4)), THETA_VALUES)
    if kind == "large":
        return PoseGrid(tuple(range(-20, 21, 4)), tuple(range(-20, 21, 4)), THETA_VALUES)
    if kind == "custom":
        if x is None or y is None or theta is None:
            raise ValueError("custom pose grid needs explicit x, y and theta lists")
        return PoseGrid(tuple(x), tuple(y), tuple(theta))
    raise ValueError(f"unknown pose grid kind {kind!r}")


# -- glyphs -------------------------------------------------------------------

# 5 x 5 blocky letterforms, row 0 on top.
_GLYPHS: dict[str, tuple[str, ...]] = {
    "A": (".###.", "#...#", "#####", "#...#", "#...#"),
    "B": ("####.", "#...#", "####.", "#...#", "####."),
    "C": (".####", "#....", "#....", "#....", ".####"),
    "D": ("####.", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "####.", "#....", "#####"),
    "F": ("#####", "#....", "####.", "#....", "#...."),
    "G": (".####", "#....", "#..##", "#...#", ".###."),
    "H": ("#...#", "#...#", "#####", "#...#", "#...#"),
    "I": ("#####", "..#..", "..#..", "..#..", "#####"),
    "J": ("#####", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "###..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "####.", "#....", "#...."),
    "Q": (".###.", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "####.", "#..#.", "#...#"),
    "S": (".####", "#....", ".###.", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", ".#.#.", "..#..", ".#.#.", "#...#"),
    "Y": ("#...#", ".#.#.", "..#..", "..#..", "..#.."),
    "Z": ("#####", "...#.", "..#..", ".#...", "#####"),
}

SCALE_PRESETS = {"small": (16.0, 12.0), "large": (40.0, 32.0)}


def glyph_names() -> list[str]:
    return sorted(_GLYPHS)


def _bitmap_rectangles(rows: Sequence[str]) -> list[tuple[int, int, int, int]]:
    """Cover the filled cells with rectangles ``(c0, r0, c1, r1)`` (exclusive ends)."""
    runs = []
    for r, line in enumerate(rows):
        c = 0
        while c < len(line):
            if line[c] == "#":
                c0 = c
                while c < len(line) and line[c] == "#":
                    c += 1
                runs.append((c0, r, c, r + 1))
            else:
                c += 1
    # merge vertically stacked identical runs
    merged: list[list[int]] = []
    for c0, r0, c1, r1 in runs:
        for m in merged:
            if m[0] == c0 and m[2] == c1 and m[3] == r0:
                m[3] = r1
                break
        else:
            merged.append([c0, r0, c1, r1])
    return [tuple(m) for m in merged]


def glyph_shape(name: str, width_mm: float, height_mm: float) -> ShapeSpec:
    if name not in _GLYPHS:
        raise KeyError(f"unknown glyph {name!r}; built-ins: {''.join(glyph_names())}")
    rows = _GLYPHS[name]
    ncols, nrows = len(rows[0]), len(rows)
    cw, ch = width_mm / ncols, height_mm / nrows
    polys = tuple(
        rectangle(
            -width_mm / 2 + c0 * cw,
            height_mm / 2 - r1 * ch,
            -width_mm / 2 + c1 * cw,
            height_mm / 2 - r0 * ch,
        )
        for c0, r0, c1, r1 in _bitmap_rectangles(rows)
    )
    return ShapeSpec(name, polygons=polys)


def parse_scale(scale: str | tuple[float, float]) -> tuple[float, float]:
    """``"small"``, ``"large"`` or ``"WxH"`` in millimetres."""
    if isinstance(scale, tuple):
        return scale
    if scale in SCALE_PRESETS:
        return SCALE_PRESETS[scale]
    try:
        w, h = scale.lower().split("x")
        return (float(w), float(h))
    except ValueError:
        raise ValueError(f"bad glyph scale {scale!r}; use small, large or WxH") from None


def parse_glyph_set(spec: str) -> list[str]:
    """``"A-L"`` → A..L; ``"MLTF"`` → M, L, T, F; ``"A,B,C"`` also accepted."""
    spec = spec.replace(",", "").replace(" ", "").upper()
    if len(spec) == 3 and spec[1] == "-":
        return [chr(c) for c in range(ord(spec[0]), ord(spec[2]) + 1)]
    return list(spec)


def glyph_library(names: Iterable[str], scale="small") -> list[ShapeSpec]:
    w, h = parse_scale(scale)
    return [glyph_shape(n, w, h) for n in names]


# -- maze boards -----------------------------------------------------------------

@dataclass(frozen=True)
class MazeParams:
    cells: int = 6
    cell_mm: float = 12.0
    wall_mm: float = 3.0
    walls: int | None = None  # interior walls kept; None keeps the whole perfect maze
    perturb_mm: float = 0.8

    def __post_init__(self):
        if self.cells < 2 or self.cell_mm <= 0 or self.wall_mm <= 0 or self.perturb_mm < 0:
            raise ValueError("maze parameters must be positive")
        if self.walls is not None and self.walls < 1:
            raise ValueError("wall count must be positive")
        if self.perturb_mm >= self.wall_mm / 2:
            raise ValueError("perturbation must stay below half the wall thickness")


def generate_maze_board(seed: int, params: MazeParams = MazeParams()) -> list[ShapeSpec]:
    """Randomised maze walls for mating-pair data collection.

    A perfect maze is carved by depth-first search; every remaining wall becomes
    a rectangle whose position and size are jittered.  The hole board is the
    complement of these walls, so each hole patch has an exactly mating peg patch.
    """
    rng = np.random.default_rng(seed)
    n = params.cells
    # wall keys: ("v", r, c) between (r, c) and (r, c+1); ("h", r, c) between (r, c) and (r+1, c)
    walls = {("v", r, c) for r in range(n) for c in range(n - 1)}
    walls |= {("h", r, c) for r in range(n - 1) for c in range(n)}
    seen = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0))]
        nbrs = [(a, b) for a, b in nbrs if 0 <= a < n and 0 <= b < n and (a, b) not in seen]
        if not nbrs:
            stack.pop()
            continue
        a, b = nbrs[rng.integers(len(nbrs))]
        if a == r:
            walls.discard(("v", r, min(c, b)))
        else:
            walls.discard(("h", min(r, a), c))
        seen.add((a, b))
        stack.append((a, b))
    interior = sorted(walls)
    if params.walls is not None and params.walls < len(interior):
        keep = rng.choice(len(interior), size=params.walls, replace=False)
        interior = [interior[i] for i in sorted(keep)]

    half = n * params.cell_mm / 2
    t, p = params.wall_mm, params.perturb_mm
    shapes = []
    for i, (kind, r, c) in enumerate(interior):
        off, grow_a, grow_b, thick = rng.uniform(-p, p, size=4)
        if kind == "v":
            x = -half + (c + 1) * params.cell_mm + off
            y0, y1 = half - (r + 1) * params.cell_mm, half - r * params.cell_mm
            rect = rectangle(x - (t + thick) / 2, y0 - t / 2 + grow_a, x + (t + thick) / 2, y1 + t / 2 + grow_b)
        else:
            y = half - (r + 1) * params.cell_mm + off
            x0, x1 = -half + c * params.cell_mm, -half + (c + 1) * params.cell_mm
            rect = rectangle(x0 - t / 2 + grow_a, y - (t + thick) / 2, x1 + t / 2 + grow_b, y + (t + thick) / 2)
        shapes.append(ShapeSpec(f"maze{seed}_w{i:03d}", polygons=(rect,)))
    return shapes
