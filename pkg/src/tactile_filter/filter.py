"""Particle filter over (category, x, y, theta) hypotheses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import PegImageBank
from .geometry import Action, Pose2D, move_poses, wrap_angle
from .similarity import SimilarityModel

RESAMPLE_SCHEMES = ("systematic", "multinomial", "none")
INIT_MODES = ("prior", "uniform", "exhaustive")


@dataclass(frozen=True)
class FilterConfig:
    K: int = 100
    n_max: int = 10
    delta_prob: float = 0.95
    delta_act: float | None = None  # None: 1% of the sensor cell count
    resample_scheme: str = "systematic"
    init_mode: str = "prior"
    uniform_bounds: tuple[float, float, float] | None = None  # (X_MAX, Y_MAX, THETA_MAX); None: grid extent
    action_frame: str = "world"
    grid_jitter: float = 0.0  # per-particle probability of a one-step grid move after resampling
    max_step_mm: float | None = None

    def __post_init__(self):
        if self.K < 1 or self.n_max < 1:
            raise ValueError("K and n_max must be at least 1")
        if not 0.5 < self.delta_prob <= 1.0:
            raise ValueError("delta_prob must lie in (0.5, 1]")
        if self.delta_act is not None and self.delta_act <= 0:
            raise ValueError("delta_act must be positive")
        if self.resample_scheme not in RESAMPLE_SCHEMES:
            raise ValueError(f"resample_scheme must be one of {RESAMPLE_SCHEMES}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.action_frame not in ("world", "body"):
            raise ValueError("action_frame must be 'world' or 'body'")
        if not 0.0 <= self.grid_jitter <= 1.0:
            raise ValueError("grid_jitter must lie in [0, 1]")

    def contact_threshold(self, bank: PegImageBank) -> float:
        return self.delta_act if self.delta_act is not None else 0.01 * bank.window.n_cells


@dataclass(frozen=True)
class Particle:
    category: str
    pose: Pose2D
    weight: float
    bank_index: int


@dataclass(eq=False)
class ParticleSet:
    """Particles as parallel arrays: category index, ``(x, y, theta)`` pose and weight."""

    cats: np.ndarray
    poses: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.cats = np.asarray(self.cats, dtype=np.int64)
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float)
        if not (len(self.cats) == len(self.poses) == len(self.weights)) or len(self.cats) == 0:
            raise ValueError("particle arrays must be non-empty and equally long")

    def __len__(self) -> int:
        return len(self.cats)

    def particle(self, i: int, bank: PegImageBank) -> Particle:
        pose = Pose2D(*self.poses[i])
        idx = int(bank.lookup(self.cats[i : i + 1], self.poses[i : i + 1])[0])
        return Particle(bank.categories[self.cats[i]], pose, float(self.weights[i]), idx)

    def bank_indices(self, bank: PegImageBank) -> np.ndarray:
        return bank.lookup(self.cats, self.poses)

    def groups(self):
        """Distinct hypotheses, sorted by (category, x, y, theta).

        Returns ``(first_index, inverse, counts)``: the lowest particle index of each
        hypothesis, each particle's hypothesis number, and duplicate counts.
        """
        keys = np.column_stack([self.cats, np.round(self.poses, 6)])
        _, first, inverse, counts = np.unique(keys, axis=0, return_index=True, return_inverse=True, return_counts=True)
        return first, inverse.ravel(), counts

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.cats.copy(), self.poses.copy(), self.weights.copy())

    def to_records(self, bank: PegImageBank) -> list[dict]:
        return [
            {"c": bank.categories[c], "x": float(p[0]), "y": float(p[1]), "theta": float(p[2]), "w": float(w)}
            for c, p, w in zip(self.cats, self.poses, self.weights)
        ]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _snap(values, v):
    vals = np.asarray(values)
    return vals[np.abs(v[:, None] - vals[None, :]).argmin(axis=1)]


def init_particles(hole_img, bank: PegImageBank, model: SimilarityModel, cfg: FilterConfig, rng_seed=None) -> ParticleSet:
    """Sample K hypotheses from the bank in proportion to hole-peg similarity."""
    rng = _rng(rng_seed)
    if bank.n_entries == 0:
        raise ValueError("empty peg image bank")
    if np.shape(hole_img) != bank.window.shape:
        raise ValueError(f"hole image {np.shape(hole_img)} does not match bank resolution {bank.window.shape}")
    if cfg.init_mode == "uniform":
        g = bank.grid
        bx, by, bt = cfg.uniform_bounds or (
            max(abs(g.x_values[0]), abs(g.x_values[-1])),
            max(abs(g.y_values[0]), abs(g.y_values[-1])),
            max(abs(g.theta_values[0]), abs(g.theta_values[-1])),
        )
        cats = rng.integers(len(bank.categories), size=cfg.K)
        poses = np.column_stack(
            [
                _snap(g.x_values, rng.uniform(-bx, bx, cfg.K)),
                _snap(g.y_values, rng.uniform(-by, by, cfg.K)),
                _snap(g.theta_values, rng.uniform(-bt, bt, cfg.K)),
            ]
        )
        return ParticleSet(cats, poses, np.full(cfg.K, 1.0 / cfg.K))

    w = np.asarray(model.hp_scores(hole_img, bank), dtype=np.float64)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise RuntimeError("similarity mass over the bank is zero")
    p = w / total
    if cfg.init_mode == "exhaustive":
        return ParticleSet(bank.entry_categories(), bank.entry_poses(), p)
    idx = rng.choice(bank.n_entries, size=cfg.K, p=p)
    return ParticleSet(bank.entry_categories()[idx], bank.entry_poses()[idx], np.full(cfg.K, 1.0 / cfg.K))


def apply_action(p: Particle, a: Action, bank: PegImageBank, frame: str = "world") -> Particle:
    """Deterministic motion of one hypothesis; the bank index follows the new pose."""
    pose = p.pose.moved(a, frame)
    idx = int(bank.lookup([bank.category_index(p.category)], [pose.as_tuple()])[0])
    return Particle(p.category, pose, p.weight, idx)


def propagate(ps: ParticleSet, a: Action, frame: str = "world") -> ParticleSet:
    return ParticleSet(ps.cats.copy(), move_poses(ps.poses, a, frame), ps.weights.copy())


def likelihoods(ps: ParticleSet, hole_img, bank: PegImageBank, model: SimilarityModel) -> np.ndarray:
    """Normalised hole-peg similarities of each particle's current bank patch."""
    idx = ps.bank_indices(bank)
    uniq, inv = np.unique(idx, return_inverse=True)
    f = np.asarray(model.hp_scores(hole_img, bank, uniq), dtype=np.float64)[inv]
    return f / f.sum()


def bayes_step(ps: ParticleSet, hole_img, bank: PegImageBank, model: SimilarityModel) -> ParticleSet:
    """Multiply prior weights by normalised likelihoods and renormalise."""
    if np.shape(hole_img) != bank.window.shape:
        raise ValueError(f"hole image {np.shape(hole_img)} does not match bank resolution {bank.window.shape}")
    post = ps.weights * likelihoods(ps, hole_img, bank, model)
    return ParticleSet(ps.cats.copy(), ps.poses.copy(), post / post.sum())


def resample(ps: ParticleSet, K: int, scheme: str = "systematic", rng_seed=None) -> ParticleSet:
    if scheme == "none":
        return ps.copy()
    rng = _rng(rng_seed)
    w = ps.weights / ps.weights.sum()
    if scheme == "systematic":
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        u = (rng.random() + np.arange(K)) / K
        idx = np.searchsorted(cdf, u, side="right")
    elif scheme == "multinomial":
        idx = rng.choice(len(w), size=K, p=w)
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return ParticleSet(ps.cats[idx], ps.poses[idx], np.full(K, 1.0 / K))


def _grid_jitter(ps: ParticleSet, bank: PegImageBank, prob: float, rng) -> ParticleSet:
    moved = rng.random(len(ps)) < prob
    if not moved.any():
        return ps
    steps = []
    for vals in (bank.grid.x_values, bank.grid.y_values, bank.grid.theta_values):
        steps.append(float(np.median(np.diff(vals))) if len(vals) > 1 else 0.0)
    axis = rng.integers(3, size=len(ps))
    sign = rng.choice([-1.0, 1.0], size=len(ps))
    poses = ps.poses.copy()
    rows = np.flatnonzero(moved)
    poses[rows, axis[rows]] += sign[rows] * np.asarray(steps)[axis[rows]]
    poses[:, 2] = wrap_angle(poses[:, 2])
    return ParticleSet(ps.cats, poses, ps.weights)


def update(
    ps: ParticleSet,
    hole_img,
    action_taken: Action,
    bank: PegImageBank,
    model: SimilarityModel,
    cfg: FilterConfig = FilterConfig(),
    rng_seed=None,
) -> ParticleSet:
    """Propagate through the action, reweight against the new hole image, resample."""
    rng = _rng(rng_seed)
    moved = propagate(ps, action_taken, cfg.action_frame)
    post = bayes_step(moved, hole_img, bank, model)
    if cfg.resample_scheme == "none":
        return post
    out = resample(post, len(ps), cfg.resample_scheme, rng)
    if cfg.grid_jitter > 0:
        out = _grid_jitter(out, bank, cfg.grid_jitter, rng)
    return out


def class_posterior(ps: ParticleSet, categories, weighted: bool = False) -> dict[str, float]:
    """Fraction of particles per category (or weight mass, with ``weighted=True``)."""
    n = len(categories)
    if weighted:
        mass = np.bincount(ps.cats, weights=ps.weights, minlength=n)
        mass = mass / mass.sum()
    else:
        mass = np.bincount(ps.cats, minlength=n) / len(ps)
    return {c: float(m) for c, m in zip(categories, mass)}


def should_terminate(ps: ParticleSet, cfg: FilterConfig, categories, weighted: bool = False) -> bool:
    return max(class_posterior(ps, categories, weighted).values()) > cfg.delta_prob


def best_index(ps: ParticleSet) -> int:
    """Index of the most probable hypothesis, summing the weight of duplicates.

    Ties go to the lowest category, then the lexicographically smallest pose,
    then the lowest particle index.
    """
    first, inverse, _ = ps.groups()
    mass = np.bincount(inverse, weights=ps.weights)
    top = np.flatnonzero(mass >= mass.max() * (1 - 1e-12))
    return int(first[top[0]])


def best_particle(ps: ParticleSet, bank: PegImageBank) -> Particle:
    return ps.particle(best_index(ps), bank)


@dataclass(frozen=True)
class PoseEstimate:
    category: str
    pose: Pose2D
    xy_error: float | None = None
    theta_error: float | None = None


def weighted_errors(ps: ParticleSet, truth: Pose2D) -> tuple[float, float]:
    w = ps.weights / ps.weights.sum()
    dxy = np.hypot(ps.poses[:, 0] - truth.x, ps.poses[:, 1] - truth.y)
    dth = np.abs(wrap_angle(ps.poses[:, 2] - truth.theta))
    return float(np.dot(w, dxy)), float(np.dot(w, dth))


def pose_estimate(ps: ParticleSet, bank: PegImageBank, ground_truth: Pose2D | None = None) -> PoseEstimate:
    best = best_particle(ps, bank)
    if ground_truth is None:
        return PoseEstimate(best.category, best.pose)
    exy, eth = weighted_errors(ps, ground_truth)
    return PoseEstimate(best.category, best.pose, exy, eth)
