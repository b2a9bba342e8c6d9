"""Episodes, experiments, single-image baselines and the action-policy ablation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .action import random_action, score_actions
from .bank import PegImageBank, pack_levels, quantize
from .filter import (
    FilterConfig,
    ParticleSet,
    best_particle,
    class_posterior,
    init_particles,
    update,
    weighted_errors,
)
from .geometry import IDENTITY, Action, Pose2D, wrap_angle
from .sensing import NOISELESS, NoiseModel, observe_hole
from .similarity import SimilarityModel

POLICIES = ("informed", "random")
DEFAULT_N_VALUES = (1, 3, 5, 10)


@dataclass(frozen=True)
class EpisodeConfig:
    category: str
    pose: Pose2D
    policy: str = "informed"
    filter: FilterConfig = FilterConfig()
    noise: NoiseModel = NOISELESS
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


@dataclass
class EpisodeResult:
    category: str
    pose: Pose2D
    predicted_category: str
    predicted_pose: Pose2D
    touches_used: int
    terminated_early: bool
    posteriors: list[dict[str, float]]
    xy_errors: list[float]
    theta_errors: list[float]
    actions: list[tuple[float, float, float]]
    blind_steps: int = 0
    transcript: list[dict] | None = None

    @property
    def xy_error(self) -> float:
        return self.xy_errors[-1]

    @property
    def theta_error(self) -> float:
        return self.theta_errors[-1]

    @property
    def predictions(self) -> list[str]:
        """Highest-posterior category after each touch (ties → first category)."""
        return [max(p, key=p.get) for p in self.posteriors]

    def _at(self, seq, n: int):
        return seq[min(n, len(seq)) - 1]

    def prediction_at(self, n: int) -> str:
        """Prediction after ``n`` touches; a terminated episode's last prediction carries forward."""
        return self._at(self.predictions, n)

    def correct_at(self, n: int) -> bool:
        return self.prediction_at(n) == self.category

    def entropies(self) -> list[float]:
        out = []
        for p in self.posteriors:
            v = np.array([x for x in p.values() if x > 0])
            out.append(float(-(v * np.log(v)).sum()))
        return out

    def pose_exact(self) -> bool:
        return self.predicted_pose.isclose(self.pose, 1e-6)

    def summary(self) -> dict:
        return {
            "category": self.category,
            "pose": list(self.pose.as_tuple()),
            "predicted_category": self.predicted_category,
            "predicted_pose": list(self.predicted_pose.as_tuple()),
            "touches_used": self.touches_used,
            "terminated_early": self.terminated_early,
            "predictions": self.predictions,
            "entropies": self.entropies(),
            "xy_errors": self.xy_errors,
            "theta_errors": self.theta_errors,
            "blind_steps": self.blind_steps,
        }


def episode_seed(seed: int, category: str, grid_index: int) -> np.random.SeedSequence:
    """Per-episode stream, stable across category subsets and trial orderings."""
    return np.random.SeedSequence([int(seed), zlib.crc32(category.encode()), int(grid_index)])


def _records(ps: ParticleSet, bank: PegImageBank) -> list[dict]:
    return ps.to_records(bank)


def run_episode(
    cfg: EpisodeConfig,
    bank: PegImageBank,
    model: SimilarityModel,
    record: bool = False,
    seed_sequence: np.random.SeedSequence | None = None,
) -> EpisodeResult:
    """One interactive identification episode against a simulated hole."""
    if cfg.category not in bank.shapes:
        raise ValueError(f"bank has no shape for category {cfg.category!r}")
    gi = bank.index_of(cfg.category, cfg.pose)
    if gi == bank.no_contact_index or not bank.entry(gi)[1].isclose(cfg.pose, 1e-6):
        raise ValueError(f"ground-truth pose {cfg.pose} is not on the bank's pose grid")
    fc = cfg.filter
    frame = fc.action_frame
    weighted = fc.resample_scheme == "none"
    shape = bank.shapes[cfg.category]
    ss = seed_sequence or np.random.SeedSequence(cfg.seed)
    filt_ss, pol_ss, noise_ss = ss.spawn(3)
    filt_rng = np.random.default_rng(filt_ss)
    pol_rng = np.random.default_rng(pol_ss)
    noise_seeds = noise_ss.generate_state(fc.n_max)

    sensor = cfg.pose
    hole = observe_hole(shape, sensor, bank.window, cfg.noise, int(noise_seeds[0]), bank.plate_margin)
    ps = init_particles(hole, bank, model, fc, filt_rng)

    posteriors, xy_errs, th_errs, actions, transcript = [], [], [], [], []
    blind = 0

    def log(step, action, cand=None):
        post = class_posterior(ps, bank.categories, weighted)
        exy, eth = weighted_errors(ps, sensor)
        posteriors.append(post)
        xy_errs.append(exy)
        th_errs.append(eth)
        if record:
            rec = {"step": step, "action": action, "class_posterior": post, "particles": _records(ps, bank)}
            if cand is not None:
                rec.update(chosen_action=action, n_feasible=int(len(cand.actions)), top5=cand.top(5))
            transcript.append(rec)
        return max(post.values())

    log(1, None)
    terminated = False
    t = 1
    for t in range(2, fc.n_max + 1):
        cand = None
        if cfg.policy == "informed":
            cand = score_actions(ps, bank, model, fc)
            a = cand.best()
        else:
            a = random_action(ps, bank, fc, pol_rng)
        if a == IDENTITY:
            blind += 1
        sensor = sensor.moved(a, frame)
        actions.append(a.as_tuple())
        hole = observe_hole(shape, sensor, bank.window, cfg.noise, int(noise_seeds[t - 1]), bank.plate_margin)
        ps = update(ps, hole, a, bank, model, fc, filt_rng)
        if log(t, list(a.as_tuple()), cand) > fc.delta_prob:
            terminated = True
            break

    best = best_particle(ps, bank)
    est = best.pose
    for a in reversed(actions):
        est = est.unmoved(Action(*a), frame)
    return EpisodeResult(
        category=cfg.category,
        pose=cfg.pose,
        predicted_category=best.category,
        predicted_pose=est,
        touches_used=t,
        terminated_early=terminated,
        posteriors=posteriors,
        xy_errors=xy_errs,
        theta_errors=th_errs,
        actions=actions,
        blind_steps=blind,
        transcript=transcript if record else None,
    )


def write_transcript(path: str | Path, result: EpisodeResult) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in result.transcript or []]
    Path(path).write_text("\n".join(lines) + "\n")


# -- single-image baselines ----------------------------------------------------------

def _l1_to_bank(hole, bank: PegImageBank) -> np.ndarray:
    q = quantize(hole, bank.levels)
    packed = bank.packed if q is not None else None
    if packed is not None:
        hp = pack_levels(q, bank.levels)
        return np.bitwise_count(hp[None] ^ packed[:-1]).sum(axis=(-2, -1), dtype=np.int64) / bank.levels
    flat = np.asarray(hole, dtype=np.float32).ravel()
    n = bank.n_entries
    return np.concatenate(
        [np.abs(bank.flat[s : min(s + 1024, n)] - flat).sum(axis=1, dtype=np.float64) for s in range(0, n, 1024)]
    )


def pixel_baseline(hole_img, bank: PegImageBank) -> tuple[str, Pose2D]:
    """Nearest bank patch by raw L1 distance (first entry wins ties)."""
    return bank.entry(int(np.argmin(_l1_to_bank(hole_img, bank))))


def single_touch_baseline(hole_img, bank: PegImageBank, model: SimilarityModel) -> tuple[str, Pose2D]:
    """Highest hole-peg similarity over the bank from the first image alone."""
    return bank.entry(int(np.argmax(model.hp_scores(hole_img, bank))))


# -- experiments -----------------------------------------------------------------------

Trial = tuple[str, Pose2D]


def full_trials(bank: PegImageBank, categories: Sequence[str] | None = None) -> list[Trial]:
    cats = bank.categories if categories is None else categories
    return [(c, p) for c in cats for p in bank.grid.poses()]


def stratified_trials(bank: PegImageBank, fraction: float, seed: int, categories: Sequence[str] | None = None) -> list[Trial]:
    """Per category and orientation, a seeded ``fraction`` of the (x, y) positions (at least one)."""
    if not 0 < fraction <= 1:
        raise ValueError("subsample fraction must lie in (0, 1]")
    cats = bank.categories if categories is None else categories
    g = bank.grid
    nx, ny, _ = g.dims
    k = max(1, int(np.ceil(fraction * nx * ny)))
    out = []
    for c in cats:
        rng = np.random.default_rng([int(seed), zlib.crc32(c.encode())])
        for th in g.theta_values:
            cells = np.sort(rng.choice(nx * ny, size=k, replace=False))
            for cell in cells:
                ix, iy = divmod(int(cell), ny)
                out.append((c, Pose2D(g.x_values[ix], g.y_values[iy], th)))
    return out


@dataclass
class ExperimentReport:
    policy: str
    n_values: tuple[int, ...]
    seeds: list[int]
    fingerprint: str
    episodes: list[dict] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def accuracy(self, n: int) -> float:
        if not self.episodes:
            return 0.0
        hits = [e["predictions"][min(n, len(e["predictions"])) - 1] == e["category"] for e in self.episodes]
        return 100.0 * float(np.mean(hits))

    def mean_error(self, n: int, key: str) -> float:
        vals = [e[key][min(n, len(e[key])) - 1] for e in self.episodes]
        return float(np.mean(vals)) if vals else 0.0

    def mean_touches(self) -> float:
        return float(np.mean([e["touches_used"] for e in self.episodes])) if self.episodes else 0.0

    def entropy_by_step(self, n_max: int) -> list[float]:
        """Mean class-posterior entropy per touch, carrying terminated episodes forward."""
        rows = [[e["entropies"][min(t, len(e["entropies"])) - 1] for t in range(1, n_max + 1)] for e in self.episodes]
        return np.mean(rows, axis=0).tolist() if rows else []

    def confusion(self, categories: Sequence[str]) -> dict[str, dict[str, int]]:
        m = {c: {d: 0 for d in categories} for c in categories}
        for e in self.episodes:
            m[e["category"]][e["predicted_category"]] += 1
        return m

    def pose_exact_rate(self) -> float:
        ok = [e for e in self.episodes if e["predicted_category"] == e["category"]]
        if not ok:
            return 0.0
        exact = [np.allclose(e["predicted_pose"], e["pose"], atol=1e-6) for e in ok]
        return 100.0 * float(np.mean(exact))

    def baseline_accuracy(self, name: str) -> float | None:
        vals = [e["baselines"][name]["category"] == e["category"] for e in self.episodes if "baselines" in e]
        return 100.0 * float(np.mean(vals)) if vals else None

    def baseline_error(self, name: str, key: str) -> float | None:
        vals = [e["baselines"][name][key] for e in self.episodes if "baselines" in e]
        return float(np.mean(vals)) if vals else None

    def to_dict(self, categories: Sequence[str]) -> dict:
        n_max = max((len(e["entropies"]) for e in self.episodes), default=0)
        d = {
            "policy": self.policy,
            "fingerprint": self.fingerprint,
            "seeds": list(self.seeds),
            "episodes": self.n_episodes,
            "accuracy": {str(n): self.accuracy(n) for n in self.n_values},
            "error_xy_mm": {str(n): self.mean_error(n, "xy_errors") for n in self.n_values},
            "error_theta_deg": {str(n): self.mean_error(n, "theta_errors") for n in self.n_values},
            "mean_touches": self.mean_touches(),
            "pose_exact_pct": self.pose_exact_rate(),
            "entropy_by_step": self.entropy_by_step(n_max),
            "confusion": self.confusion(categories),
        }
        for name in ("pixel", "single_touch"):
            acc = self.baseline_accuracy(name)
            if acc is not None:
                d.setdefault("baselines", {})[name] = {
                    "accuracy": acc,
                    "error_xy_mm": self.baseline_error(name, "xy_error"),
                    "error_theta_deg": self.baseline_error(name, "theta_error"),
                }
        return d

    def to_json(self, categories: Sequence[str], with_episodes: bool = True) -> str:
        d = self.to_dict(categories)
        if with_episodes:
            d["episode_records"] = self.episodes
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def accuracy_csv(self) -> str:
        """Table layout: Pixel, single touch, then the filter at each n."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["metric", "pixel", "single_touch"] + [f"n={n}" for n in self.n_values]
        w.writerow(cols)

        def fmt(v):
            return "" if v is None else f"{v:.1f}"

        w.writerow(["accuracy_pct", fmt(self.baseline_accuracy("pixel")), fmt(self.baseline_accuracy("single_touch"))] + [fmt(self.accuracy(n)) for n in self.n_values])
        w.writerow(["error_xy_mm", fmt(self.baseline_error("pixel", "xy_error")), fmt(self.baseline_error("single_touch", "xy_error"))] + [fmt(self.mean_error(n, "xy_errors")) for n in self.n_values])
        w.writerow(["error_theta_deg", fmt(self.baseline_error("pixel", "theta_error")), fmt(self.baseline_error("single_touch", "theta_error"))] + [fmt(self.mean_error(n, "theta_errors")) for n in self.n_values])
        return buf.getvalue()

    def entropy_csv(self) -> str:
        n_max = max((len(e["entropies"]) for e in self.episodes), default=0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["touch", "mean_entropy"])
        for t, h in enumerate(self.entropy_by_step(n_max), start=1):
            w.writerow([t, f"{h:.6f}"])
        return buf.getvalue()


def config_fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _pose_error(pred: Pose2D, truth: Pose2D) -> tuple[float, float]:
    return float(np.hypot(pred.x - truth.x, pred.y - truth.y)), float(abs(wrap_angle(pred.theta - truth.theta)))


def _baselines(cfg: EpisodeConfig, bank: PegImageBank, model: SimilarityModel, ss: np.random.SeedSequence) -> dict:
    # reproduce the episode's first observation: noise stream is the third child
    noise_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key).spawn(3)[2]
    seed0 = int(noise_ss.generate_state(1)[0])
    hole = observe_hole(bank.shapes[cfg.category], cfg.pose, bank.window, cfg.noise, seed0, bank.plate_margin)
    out = {}
    for name, (cat, pose) in (("pixel", pixel_baseline(hole, bank)), ("single_touch", single_touch_baseline(hole, bank, model))):
        exy, eth = _pose_error(pose, cfg.pose)
        out[name] = {"category": cat, "pose": list(pose.as_tuple()), "xy_error": exy, "theta_error": eth}
    return out


_WORKER: dict = {}


def _worker_init(bank, model, episode_fn, baselines, transcript_dir=None):
    _WORKER.update(bank=bank, model=model, episode_fn=episode_fn, baselines=baselines, transcript_dir=transcript_dir)


def transcript_name(seed: int, category: str, grid_index: int) -> str:
    return f"episode_s{seed}_{category}_{grid_index:05d}.jsonl"


def _run_job(job):
    cfg, seed, gi = job
    bank, model, tdir = _WORKER["bank"], _WORKER["model"], _WORKER["transcript_dir"]
    ss = episode_seed(seed, cfg.category, gi)
    if tdir is None:
        res = _WORKER["episode_fn"](cfg, bank, model, seed_sequence=ss)
    else:
        res = _WORKER["episode_fn"](cfg, bank, model, record=True, seed_sequence=ss)
        write_transcript(Path(tdir) / transcript_name(seed, cfg.category, gi), res)
    row = res.summary() if isinstance(res, EpisodeResult) else dict(res)
    row["seed"] = seed
    if _WORKER["baselines"]:
        row["baselines"] = _baselines(cfg, bank, model, ss)
    return row


def run_experiment(
    bank: PegImageBank,
    model: SimilarityModel,
    seeds: Sequence[int],
    policy: str = "informed",
    filter_cfg: FilterConfig = FilterConfig(),
    noise: NoiseModel = NOISELESS,
    subsample: float | None = 0.1,
    trials: Sequence[Trial] | None = None,
    categories: Sequence[str] | None = None,
    n_values: Sequence[int] = DEFAULT_N_VALUES,
    baselines: bool = False,
    jobs: int = 1,
    episode_fn: Callable = run_episode,
    transcript_dir: str | Path | None = None,
) -> ExperimentReport:
    """One episode per (trial, seed).  Without explicit ``trials``, each seed draws its own
    stratified subsample (or the full grid when ``subsample`` is None).

    Rows come back in submission order whatever ``jobs`` is, so reports do not
    depend on the degree of parallelism.
    """
    if transcript_dir is not None:
        Path(transcript_dir).mkdir(parents=True, exist_ok=True)
    jobs_list = []
    P = len(bank.grid)
    for seed in seeds:
        if trials is not None:
            ts = list(trials)
        elif subsample is None:
            ts = full_trials(bank, categories)
        else:
            ts = stratified_trials(bank, subsample, seed, categories)
        for cat, pose in ts:
            gi = bank.index_of(cat, pose) % P
            jobs_list.append((EpisodeConfig(cat, pose, policy, filter_cfg, noise, seed), seed, gi))

    if jobs > 1:
        init = (bank, model, episode_fn, baselines, transcript_dir)
        with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=init) as ex:
            rows = list(ex.map(_run_job, jobs_list, chunksize=16))
    else:
        _worker_init(bank, model, episode_fn, baselines, transcript_dir)
        rows = [_run_job(j) for j in jobs_list]

    fp = config_fingerprint(
        {
            "policy": policy,
            "filter": asdict(filter_cfg),
            "noise": asdict(noise),
            "subsample": subsample,
            "seeds": list(seeds),
            "bank": bank.digest(),
            "categories": list(categories or bank.categories),
            "trials": None if trials is None else [(c, p.as_tuple()) for c, p in trials],
        }
    )
    return ExperimentReport(policy, tuple(n for n in n_values), list(seeds), fp, rows)


# -- policy ablation ----------------------------------------------------------------------

def paired_bootstrap(diffs: np.ndarray, n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> tuple[float, float, float]:
    """Mean paired difference and its percentile bootstrap interval."""
    diffs = np.asarray(diffs, dtype=float)
    if len(diffs) == 0:
        return 0.0, 0.0, 0.0
    rng = np.random.default_rng(seed)
    means = diffs[rng.integers(len(diffs), size=(n_boot, len(diffs)))].mean(axis=1)
    a = (1 - level) / 2
    lo, hi = np.quantile(means, [a, 1 - a])
    return float(diffs.mean()), float(lo), float(hi)


@dataclass
class AblationReport:
    informed: ExperimentReport
    random: ExperimentReport
    n_values: tuple[int, ...]
    accuracy_diff: dict[int, tuple[float, float, float]]
    touches_diff: tuple[float, float, float]

    def to_dict(self, categories) -> dict:
        return {
            "informed": self.informed.to_dict(categories),
            "random": self.random.to_dict(categories),
            "accuracy_diff_pct": {str(n): dict(zip(("mean", "ci_low", "ci_high"), v)) for n, v in self.accuracy_diff.items()},
            "touches_diff": dict(zip(("mean", "ci_low", "ci_high"), self.touches_diff)),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "informed", "random", "diff", "ci_low", "ci_high"])
        for n in self.n_values:
            d, lo, hi = self.accuracy_diff[n]
            w.writerow([n, f"{self.informed.accuracy(n):.2f}", f"{self.random.accuracy(n):.2f}", f"{d:.2f}", f"{lo:.2f}", f"{hi:.2f}"])
        d, lo, hi = self.touches_diff
        w.writerow(["touches", f"{self.informed.mean_touches():.3f}", f"{self.random.mean_touches():.3f}", f"{d:.3f}", f"{lo:.3f}", f"{hi:.3f}"])
        return buf.getvalue()


def compare_reports(a: ExperimentReport, b: ExperimentReport, n_values=None, n_boot: int = 2000) -> AblationReport:
    """Paired comparison of two reports run over identical (trial, seed) episodes."""
    n_values = tuple(n_values or a.n_values)
    if len(a.episodes) != len(b.episodes):
        raise ValueError("reports are not paired")
    acc = {}
    for n in n_values:
        ca = np.array([e["predictions"][min(n, len(e["predictions"])) - 1] == e["category"] for e in a.episodes], float)
        cb = np.array([e["predictions"][min(n, len(e["predictions"])) - 1] == e["category"] for e in b.episodes], float)
        m, lo, hi = paired_bootstrap(ca - cb, n_boot)
        acc[n] = (100 * m, 100 * lo, 100 * hi)
    ta = np.array([e["touches_used"] for e in a.episodes], float)
    tb = np.array([e["touches_used"] for e in b.episodes], float)
    return AblationReport(a, b, n_values, acc, paired_bootstrap(ta - tb, n_boot))


def ablate_policies(
    bank: PegImageBank,
    model: SimilarityModel,
    seeds: Sequence[int],
    filter_cfg: FilterConfig = FilterConfig(),
    noise: NoiseModel = NOISELESS,
    subsample: float | None = 0.1,
    trials: Sequence[Trial] | None = None,
    n_values: Sequence[int] = DEFAULT_N_VALUES,
    policies: tuple[str, str] = ("informed", "random"),
    jobs: int = 1,
    n_boot: int = 2000,
) -> AblationReport:
    reports = [
        run_experiment(bank, model, seeds, p, filter_cfg, noise, subsample, trials, n_values=n_values, jobs=jobs)
        for p in policies
    ]
    return compare_reports(reports[0], reports[1], n_values, n_boot)
