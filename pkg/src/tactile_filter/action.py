"""Candidate touches, the contact filter and maximum-likelihood action selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import PegImageBank
from .filter import FilterConfig, Particle, ParticleSet, best_index
from .geometry import IDENTITY, Action, Pose2D, PoseGrid, wrap_angle
from .similarity import SimilarityModel


def candidate_array(grid: PoseGrid, current: Pose2D, max_step_mm: float | None = None) -> np.ndarray:
    """Displacements ``(n, 3)`` taking ``current`` onto every other grid pose."""
    d = grid.poses_array() - np.array(current.as_tuple())
    d[:, 2] = wrap_angle(d[:, 2])
    keep = ~np.all(np.abs(d) < 1e-9, axis=1)
    if max_step_mm is not None:
        keep &= np.hypot(d[:, 0], d[:, 1]) <= max_step_mm + 1e-9
    return d[keep]


def enumerate_actions(grid: PoseGrid, current_pose: Pose2D, max_step_mm: float | None = None) -> list[Action]:
    return [Action(*row) for row in candidate_array(grid, current_pose, max_step_mm)]


def _moved(poses: np.ndarray, acts: np.ndarray, frame: str) -> np.ndarray:
    """Every pose under every action: ``(n_poses, n_actions, 3)``."""
    P = poses[:, None, :]
    A = acts[None, :, :]
    if frame == "world":
        out = P + A
    else:
        t = np.radians(P[..., 2])
        c, s = np.cos(t), np.sin(t)
        out = np.stack(
            [P[..., 0] + c * A[..., 0] - s * A[..., 1], P[..., 1] + s * A[..., 0] + c * A[..., 1], P[..., 2] + A[..., 2]],
            axis=-1,
        )
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def _target_indices(s_star: Particle, acts: np.ndarray, bank: PegImageBank, frame: str) -> np.ndarray:
    c = bank.category_index(s_star.category)
    targets = _moved(np.array([s_star.pose.as_tuple()]), acts, frame)[0]
    return bank.lookup(np.full(len(acts), c), targets)


def _as_array(actions) -> np.ndarray:
    if isinstance(actions, np.ndarray):
        return actions.reshape(-1, 3)
    return np.array([a.as_tuple() for a in actions], dtype=float).reshape(-1, 3)


def feasible_mask(s_star: Particle, acts: np.ndarray, bank: PegImageBank, delta_act: float, frame: str = "world") -> np.ndarray:
    """Actions after which the hypothesised peg patch still has contact (mass > delta_act)."""
    if delta_act <= 0:
        raise ValueError("delta_act must be positive")
    return bank.mass[_target_indices(s_star, acts, bank, frame)] > delta_act


def feasible_actions(s_star: Particle, candidates, bank: PegImageBank, delta_act: float, frame: str = "world") -> list[Action]:
    acts = _as_array(candidates)
    keep = feasible_mask(s_star, acts, bank, delta_act, frame)
    return [Action(*row) for row in acts[keep]]


def _likelihoods(s_star_index: int, ps: ParticleSet, acts: np.ndarray, bank: PegImageBank, model: SimilarityModel, frame: str):
    s_star = ps.particle(s_star_index, bank)
    first, inverse, counts = ps.groups()
    own = inverse[s_star_index]
    star_idx = _target_indices(s_star, acts, bank, frame)
    U, F = len(first), len(acts)
    if frame == "world":
        other_idx = bank.lookup_outer(ps.cats[first], ps.poses[first], acts)
    else:
        moved = _moved(ps.poses[first], acts, frame)
        other_idx = bank.lookup(np.repeat(ps.cats[first], F), moved.reshape(-1, 3)).reshape(U, F)
    # one row per action keeps the memo reads for that action within one table row
    inv_f = 1.0 / np.asarray(model.pp_scores(bank, np.broadcast_to(star_idx[:, None], (F, U)), other_idx.T), dtype=np.float64)
    return inv_f @ counts - inv_f[:, own]


def action_likelihood(a: Action, s_star_index: int, particles: ParticleSet, bank: PegImageBank, model: SimilarityModel, frame: str = "world") -> float:
    """Sum over every other particle of ``1 / f_PP`` between its patch and the reference's, after ``a``.

    Duplicated hypotheses contribute one term each; only the reference particle
    itself is left out.
    """
    return float(_likelihoods(s_star_index, particles, _as_array([a]), bank, model, frame)[0])


@dataclass
class ActionCandidateSet:
    actions: np.ndarray  # (n, 3) feasible displacements
    likelihoods: np.ndarray
    n_candidates: int
    reference: Particle

    def best(self) -> Action:
        """Argmax likelihood; ties → smallest |dx|+|dy|+|dtheta|, then lexicographic."""
        if len(self.actions) == 0:
            return IDENTITY
        lmax = self.likelihoods.max()
        top = np.flatnonzero(self.likelihoods >= lmax * (1 - 1e-12))
        acts = self.actions[top]
        mag = np.abs(acts).sum(axis=1)
        order = np.lexsort((acts[:, 2], acts[:, 1], acts[:, 0], mag))
        return Action(*acts[order[0]])

    def top(self, n: int = 5) -> list[dict]:
        order = np.lexsort((np.abs(self.actions).sum(axis=1), -self.likelihoods))[:n]
        return [{"a": self.actions[i].tolist(), "l_a": float(self.likelihoods[i])} for i in order]


def score_actions(ps: ParticleSet, bank: PegImageBank, model: SimilarityModel, cfg: FilterConfig = FilterConfig()) -> ActionCandidateSet:
    """Likelihood of every feasible action for the current most probable particle."""
    s_idx = best_index(ps)
    s_star = ps.particle(s_idx, bank)
    cands = candidate_array(bank.grid, s_star.pose, cfg.max_step_mm)
    acts = cands[feasible_mask(s_star, cands, bank, cfg.contact_threshold(bank), cfg.action_frame)]
    lik = _likelihoods(s_idx, ps, acts, bank, model, cfg.action_frame) if len(acts) else np.zeros(0)
    return ActionCandidateSet(acts, lik, len(cands), s_star)


def select_action(ps: ParticleSet, bank: PegImageBank, model: SimilarityModel, cfg: FilterConfig = FilterConfig(), rng_seed=None) -> Action:
    """Most disambiguating feasible touch; the identity when nothing is feasible."""
    return score_actions(ps, bank, model, cfg).best()


def random_action(ps: ParticleSet, bank: PegImageBank, cfg: FilterConfig = FilterConfig(), rng_seed=None) -> Action:
    """Uniform draw from the feasible actions of the most probable particle."""
    rng = np.random.default_rng(rng_seed)
    s_star = ps.particle(best_index(ps), bank)
    cands = candidate_array(bank.grid, s_star.pose, cfg.max_step_mm)
    acts = cands[feasible_mask(s_star, cands, bank, cfg.contact_threshold(bank), cfg.action_frame)]
    if len(acts) == 0:
        return IDENTITY
    return Action(*acts[rng.integers(len(acts))])
