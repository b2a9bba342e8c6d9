"""Command-line entry point: shapes, bank, run, experiment, ablate, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import shutil
import sys
import tempfile
from pathlib import Path


from . import __version__
from .bank import MANIFEST, PegImageBank
from .filter import FilterConfig
from .geometry import (
    MazeParams,
    Pose2D,
    SensorWindow,
    ShapeSpec,
    generate_maze_board,
    glyph_library,
    make_pose_grid,
    parse_glyph_set,
)
from .harness import (
    EpisodeConfig,
    ablate_policies,
    run_episode,
    run_experiment,
    write_transcript,
)
from .sensing import NoiseModel
from .similarity import EmbeddingModel, GeometricOracle, TableEncoder, load_embedding_table

log = logging.getLogger("tactile_filter")

RUN_MANIFEST = "run_manifest.json"
TOOL = "tactile-filter"


class CliError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------

def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_digests(root: Path, skip=(RUN_MANIFEST,)) -> dict[str, str]:
    """sha256 of every file under ``root``, keyed by relative POSIX path."""
    root = Path(root)
    if root.is_file():
        return {root.name: file_digest(root)}
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[p.relative_to(root).as_posix()] = file_digest(p)
    return out


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0-9"`` or ``"1,4,7"``."""
    seeds: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            seeds.extend(range(int(m[1]), int(m[2]) + 1))
        elif part.isdigit():
            seeds.append(int(part))
        elif part:
            raise CliError(f"bad seed list {text!r}")
    if not seeds:
        raise CliError(f"no seeds in {text!r}")
    return seeds


def parse_pose(text: str) -> Pose2D:
    try:
        x, y, t = (float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"pose must be 'x,y,theta', got {text!r}") from None
    return Pose2D(x, y, t)


def _filter_cfg(a) -> FilterConfig:
    return FilterConfig(
        K=a.K,
        n_max=a.n_max,
        delta_prob=a.delta_prob,
        delta_act=a.delta_act,
        resample_scheme=a.resample,
        init_mode=a.init_mode,
        action_frame=a.action_frame,
        grid_jitter=a.grid_jitter,
        max_step_mm=a.max_step,
    )


def _noise(a) -> NoiseModel:
    return NoiseModel(flip_prob=a.noise_flip, blur_radius=a.noise_blur, pose_jitter=tuple(a.noise_jitter))


def _model(a, bank: PegImageBank, wd: Path):
    if a.embeddings:
        table = load_embedding_table(wd / a.embeddings, bank)
        enc = TableEncoder(table, bank)
        return EmbeddingModel(enc, enc, table.tau)
    return GeometricOracle(epsilon=a.epsilon, sharpness=a.sharpness)


def _load_bank(wd: Path, rel: str) -> PegImageBank:
    d = wd / rel
    if not (d / MANIFEST).exists():
        raise CliError(f"no peg image bank at {d}")
    return PegImageBank.load(d)


def _prepare_out(wd: Path, rel: str) -> Path:
    out = wd / rel
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _inputs(wd: Path, a) -> dict[str, str]:
    digests = {}
    for key in ("bank", "shapes", "embeddings"):
        rel = getattr(a, key, None)
        if rel:
            for name, d in tree_digests(wd / rel).items():
                digests[f"{rel}/{name}" if (wd / rel).is_dir() else rel] = d
    return digests


def write_run_manifest(wd: Path, out: Path, a, config: dict, seeds) -> Path:
    man = {
        "tool": TOOL,
        "version": __version__,
        "command": a.command,
        "config": config,
        "seeds": list(seeds),
        "inputs": _inputs(wd, a),
        "outputs": tree_digests(out),
        "out": out.relative_to(wd).as_posix() if out.is_relative_to(wd) else str(out),
    }
    path = out / RUN_MANIFEST
    _write(path, json.dumps(man, indent=1, sort_keys=True) + "\n")
    return path


def _config_snapshot(a) -> dict:
    skip = {"func", "config", "workdir", "command"}
    return {k: v for k, v in sorted(vars(a).items()) if k not in skip}


# -- commands ----------------------------------------------------------------------------

def cmd_shapes(a, wd: Path) -> Path:
    out = _prepare_out(wd, a.out)
    if a.kind == "glyphs":
        try:
            shapes = glyph_library(parse_glyph_set(a.set), a.scale)
        except KeyError as exc:
            raise CliError(str(exc.args[0])) from None
    else:
        shapes = generate_maze_board(a.seed, MazeParams(walls=a.walls, perturb_mm=a.perturb, cells=a.cells))
    for s in shapes:
        s.save(out / f"{s.category_id}.json")
    print(f"{len(shapes)} shapes -> {out}")
    return write_run_manifest(wd, out, a, _config_snapshot(a), [a.seed] if a.kind == "maze" else [])


def _load_shapes(d: Path) -> list[ShapeSpec]:
    files = sorted(d.glob("*.json"))
    files = [f for f in files if f.name != RUN_MANIFEST]
    if not files:
        raise CliError(f"no shape files in {d}")
    return [ShapeSpec.load(f) for f in files]


def _grid(a):
    if a.grid == "custom":
        if not (a.x_values and a.y_values and a.theta_values):
            raise CliError("custom grid needs --x-values, --y-values and --theta-values")
        return make_pose_grid("custom", a.x_values, a.y_values, a.theta_values)
    return make_pose_grid(a.grid)


def cmd_bank(a, wd: Path) -> Path:
    if a.shapes:
        shapes = _load_shapes(wd / a.shapes)
    else:
        shapes = glyph_library(parse_glyph_set(a.glyphs), a.scale)
    window = SensorWindow(a.width_mm, a.height_mm, a.cols, a.rows)
    grid = _grid(a)
    out = wd / a.out
    if (out / MANIFEST).exists() and not a.force:
        old = json.loads((out / MANIFEST).read_text())
        if old.get("pose_grid") != grid.to_dict() or (old["window"]["cols"], old["window"]["rows"]) != (a.cols, a.rows):
            raise CliError(f"{out} holds a bank with a different resolution or pose grid (use --force)")
    bank = PegImageBank.build(shapes, grid, window, a.supersample, a.plate_margin)
    if out.exists() and a.force:
        shutil.rmtree(out)
    out = _prepare_out(wd, a.out)
    bank.save(out)
    print(f"{bank.n_entries} entries ({len(bank.categories)} categories x {len(grid)} poses) digest {bank.digest()[:16]}")
    return write_run_manifest(wd, out, a, _config_snapshot(a), [])


def cmd_run(a, wd: Path) -> Path:
    bank = _load_bank(wd, a.bank)
    model = _model(a, bank, wd)
    cfg = EpisodeConfig(a.category, parse_pose(a.pose), a.policy, _filter_cfg(a), _noise(a), a.seed)
    try:
        res = run_episode(cfg, bank, model, record=True)
    except (ValueError, KeyError) as exc:
        raise CliError(str(exc)) from None
    out = _prepare_out(wd, a.out)
    write_transcript(out / "transcript.jsonl", res)
    summary = res.summary()
    _write(out / "result.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    p = res.predicted_pose
    print(
        f"truth {res.category} {res.pose.as_tuple()} -> predicted {res.predicted_category} "
        f"({p.x:g}, {p.y:g}, {p.theta:g}) after {res.touches_used} touches"
    )
    return write_run_manifest(wd, out, a, _config_snapshot(a), [a.seed])


def _emit_report(rep, categories, out: Path, stem: str = "") -> None:
    _write(out / f"{stem}report.json", rep.to_json(categories))
    _write(out / f"{stem}accuracy.csv", rep.accuracy_csv())
    _write(out / f"{stem}entropy.csv", rep.entropy_csv())


def cmd_experiment(a, wd: Path) -> Path:
    bank = _load_bank(wd, a.bank)
    if a.categories:
        bank = bank.subset(parse_glyph_set(a.categories))
    model = _model(a, bank, wd)
    seeds = parse_seeds(a.seeds)
    out = _prepare_out(wd, a.out)
    rep = run_experiment(
        bank,
        model,
        seeds,
        a.policy,
        _filter_cfg(a),
        _noise(a),
        None if a.full else a.subsample,
        baselines=a.baselines,
        jobs=a.jobs,
        transcript_dir=out / "transcripts" if a.transcripts else None,
    )
    _emit_report(rep, bank.categories, out)
    accs = ", ".join(f"n={n}: {rep.accuracy(n):.1f}%" for n in rep.n_values)
    print(f"{rep.n_episodes} episodes; accuracy {accs}; mean touches {rep.mean_touches():.2f}")
    return write_run_manifest(wd, out, a, _config_snapshot(a), seeds)


def cmd_ablate(a, wd: Path) -> Path:
    bank = _load_bank(wd, a.bank)
    if a.categories:
        bank = bank.subset(parse_glyph_set(a.categories))
    model = _model(a, bank, wd)
    seeds = parse_seeds(a.seeds)
    out = _prepare_out(wd, a.out)
    abl = ablate_policies(
        bank, model, seeds, _filter_cfg(a), _noise(a), None if a.full else a.subsample, jobs=a.jobs, n_boot=a.bootstrap
    )
    _write(out / "ablation.csv", abl.to_csv())
    _write(out / "ablation.json", json.dumps(abl.to_dict(bank.categories), indent=1, sort_keys=True) + "\n")
    _emit_report(abl.informed, bank.categories, out, "informed_")
    _emit_report(abl.random, bank.categories, out, "random_")
    sys.stdout.write(abl.to_csv())
    return write_run_manifest(wd, out, a, _config_snapshot(a), seeds)


def cmd_report(a, wd: Path) -> int:
    """Re-execute a recorded command and compare every output digest."""
    man_path = wd / a.manifest
    try:
        man = json.loads(man_path.read_text())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read run manifest {man_path}: {exc}") from None
    if man.get("tool") != TOOL:
        raise CliError(f"{man_path} is not a {TOOL} run manifest")
    for rel, digest in man["inputs"].items():
        p = wd / rel
        if not p.exists() or file_digest(p) != digest:
            raise CliError(f"input {rel} is missing or changed since the recorded run")
    with tempfile.TemporaryDirectory(dir=wd, prefix=".replay-") as tmp:
        cfg = dict(man["config"])
        rel_tmp = Path(tmp).relative_to(wd).as_posix()
        cfg["out"] = rel_tmp
        ns = argparse.Namespace(command=man["command"], workdir=str(wd), config=None, **cfg)
        ns.func = COMMANDS[man["command"]]
        with _quiet_stdout():
            ns.func(ns, wd)
        replay = tree_digests(Path(tmp))
    recorded = man["outputs"]
    bad = sorted(k for k in set(recorded) | set(replay) if recorded.get(k) != replay.get(k))
    for k in bad:
        print(f"MISMATCH {k}", file=sys.stderr)
    print(f"{man['command']}: {len(recorded)} outputs, {len(bad)} mismatched")
    if not a.no_summary:
        _print_summary(wd / man["out"], man["command"])
    return 1 if bad else 0


class _quiet_stdout:
    def __enter__(self):
        self._old = sys.stdout
        sys.stdout = open(os.devnull, "w")

    def __exit__(self, *exc):
        sys.stdout.close()
        sys.stdout = self._old


def _print_summary(out: Path, command: str) -> None:
    for name in ("accuracy.csv", "ablation.csv", "informed_accuracy.csv"):
        p = out / name
        if p.exists():
            print(f"-- {name}")
            sys.stdout.write(p.read_text())


COMMANDS = {
    "shapes": cmd_shapes,
    "bank": cmd_bank,
    "run": cmd_run,
    "experiment": cmd_experiment,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


# -- argument parsing ------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _add_model_flags(p):
    p.add_argument("--bank", default="bank", help="bank directory (relative to --workdir)")
    p.add_argument("--embeddings", default=None, help="embedding table file; default: geometric oracle")
    p.add_argument("--sharpness", type=float, default=8.0)
    p.add_argument("--epsilon", type=float, default=1e-6)


def _add_filter_flags(p):
    p.add_argument("--K", type=int, default=100, help="particle count")
    p.add_argument("--n-max", type=int, default=10, help="maximum touches")
    p.add_argument("--delta-prob", type=float, default=0.95, help="termination threshold")
    p.add_argument("--delta-act", type=float, default=None, help="contact threshold (default 1%% of cells)")
    p.add_argument("--resample", choices=("systematic", "multinomial", "none"), default="systematic")
    p.add_argument("--init-mode", choices=("prior", "uniform", "exhaustive"), default="prior")
    p.add_argument("--action-frame", choices=("world", "body"), default="world")
    p.add_argument("--grid-jitter", type=float, default=0.0)
    p.add_argument("--max-step", type=float, default=None, help="cap on per-touch translation, mm")
    p.add_argument("--noise-flip", type=float, default=0.0, help="per-cell flip probability")
    p.add_argument("--noise-blur", type=float, default=0.0, help="Gaussian blur sigma, pixels")
    p.add_argument("--noise-jitter", type=_floats, default=[0.0, 0.0, 0.0], help="pose jitter sigmas 'x,y,theta'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=TOOL, description=__doc__)
    ap.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    ap.add_argument("--workdir", default=".", help="base directory for every relative path")
    ap.add_argument("--config", default=None, help="JSON file of option defaults; flags override it")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.subcommands = sub.choices

    p = sub.add_parser("shapes", help="write glyph or maze shape files")
    p.add_argument("kind", choices=("glyphs", "maze"))
    p.add_argument("--set", default="A-L", help="glyph names: A-L, MLTF or A,B,C")
    p.add_argument("--scale", default="small", help="small, large or WxH in mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--walls", type=int, default=None)
    p.add_argument("--perturb", type=float, default=0.8)
    p.add_argument("--cells", type=int, default=6)
    p.add_argument("--out", default="shapes")

    p = sub.add_parser("bank", help="rasterise the peg image bank")
    p.add_argument("--shapes", default=None, help="shape directory; default: built-in glyphs")
    p.add_argument("--glyphs", default="A-L")
    p.add_argument("--scale", default="small")
    p.add_argument("--grid", choices=("small", "large", "custom"), default="small")
    p.add_argument("--x-values", type=_floats, default=None)
    p.add_argument("--y-values", type=_floats, default=None)
    p.add_argument("--theta-values", type=_floats, default=None)
    p.add_argument("--width-mm", type=float, default=18.6)
    p.add_argument("--height-mm", type=float, default=14.3)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--rows", type=int, default=48)
    p.add_argument("--supersample", type=int, default=2)
    p.add_argument("--plate-margin", type=float, default=None)
    p.add_argument("--force", action="store_true", help="replace an incompatible existing bank")
    p.add_argument("--out", default="bank")

    p = sub.add_parser("run", help="one episode with a full transcript")
    _add_model_flags(p)
    _add_filter_flags(p)
    p.add_argument("--category", required=True)
    p.add_argument("--pose", default="0,0,0", help="ground-truth grid pose 'x,y,theta'")
    p.add_argument("--policy", choices=("informed", "random"), default="informed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="run")

    for name, helptext in (("experiment", "episodes over a trial grid and seeds"), ("ablate", "informed vs random, paired")):
        p = sub.add_parser(name, help=helptext)
        _add_model_flags(p)
        _add_filter_flags(p)
        p.add_argument("--seeds", default="0", help="'3', '0-9' or '1,4,7'")
        p.add_argument("--subsample", type=float, default=0.1, help="stratified pose fraction per seed")
        p.add_argument("--full", action="store_true", help="every grid pose instead of a subsample")
        p.add_argument("--categories", default=None, help="restrict to these categories")
        p.add_argument("--out", default=name)
        if name == "experiment":
            p.add_argument("--policy", choices=("informed", "random"), default="informed")
            p.add_argument("--baselines", action="store_true", help="also score the single-image baselines")
            p.add_argument("--transcripts", action="store_true", help="write one transcript per episode")
        else:
            p.add_argument("--bootstrap", type=int, default=2000)

    p = sub.add_parser("report", help="replay a run manifest and verify its outputs")
    p.add_argument("manifest", help="path to run_manifest.json")
    p.add_argument("--no-summary", action="store_true")
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        path = Path(args.workdir) / args.config
        try:
            conf = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"malformed config {path}: {exc}") from None
        if not isinstance(conf, dict):
            raise CliError(f"config {path} must hold a JSON object")
        # config values become defaults, so explicit flags still win
        sub = ap.subcommands[args.command]
        known = {act.dest for act in sub._actions}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise CliError(f"config {path}: unknown option(s) {', '.join(unknown)}")
        sub.set_defaults(**conf)
        args = ap.parse_args(argv)
    args.func = COMMANDS[args.command]
    return args


def main(argv=None) -> int:
    level = os.environ.get("TF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        args = parse_args(argv)
        wd = Path(args.workdir).resolve()
        wd.mkdir(parents=True, exist_ok=True)
        result = args.func(args, wd)
        return result if isinstance(result, int) else 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
