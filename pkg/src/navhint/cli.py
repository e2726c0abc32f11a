"""Command-line entry point: ``navhint <command> ...``.

Every command writes its outputs plus a run manifest (``*.manifest.json``)
recording input and output digests. Exit status is 0 on success, 1 on a
validation failure (missing or malformed input, failed check) and 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .errors import CheckFailure, NavHintError, SchemaError

log = logging.getLogger("navhint")

MANIFEST_VERSION = "1.0"


class ValidationError(NavHintError):
    """Bad or missing input; maps to exit status 1."""


# ---------------------------------------------------------------------------
# manifests


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def path_digests(path: str | Path) -> dict[str, str]:
    """Digest of a file, or of every file under a directory (sorted)."""
    p = Path(path)
    if p.is_dir():
        return {str(f): file_digest(f) for f in sorted(p.rglob("*")) if f.is_file()
                and not f.name.endswith(".manifest.json")}
    return {str(p): file_digest(p)}


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0
    schema_version: str = MANIFEST_VERSION
    tool_version: str = __version__

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        if str(data.get("schema_version", "")).split(".")[0] != MANIFEST_VERSION.split(".")[0]:
            raise SchemaError(f"{path}: unsupported manifest version {data.get('schema_version')!r}")
        return cls(**data)

    def verify(self) -> list[str]:
        """Paths whose current digest differs from the recorded one."""
        bad = []
        for digests in (self.inputs, self.outputs):
            for p, digest in digests.items():
                if not Path(p).is_file() or file_digest(p) != digest:
                    bad.append(p)
        return bad


def _config_hash(args: argparse.Namespace) -> str:
    items = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()


def _require(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _write_manifest(args, manifest_path: Path, inputs: Sequence, outputs: Sequence, t0: float,
                    seed: int | None = None) -> None:
    m = RunManifest(command=args.command_name, config_hash=_config_hash(args), seed=seed)
    for p in inputs:
        if p is not None and Path(p).exists():
            m.inputs.update(path_digests(p))
    for p in outputs:
        if p is not None and Path(p).exists():
            m.outputs.update(path_digests(p))
    m.wall_time = round(time.time() - t0, 3)
    m.write(manifest_path)


def _manifest_for(out: Path) -> Path:
    # sibling file, so directory outputs stay free of non-data files
    return out.with_name(out.name + ".manifest.json")


def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: invalid TOML ({exc})") from None


def _dataclass_from(cls, raw: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return cls(**kw)


def _generator_configs(path: Path | None):
    from .world import CorpusConfig, EpisodeConfig, WorldConfig

    raw = _load_toml(path) if path else {}
    return (_dataclass_from(WorldConfig, raw.get("world", {})),
            _dataclass_from(EpisodeConfig, raw.get("episodes", {})),
            _dataclass_from(CorpusConfig, raw.get("corpus", {})))


# ---------------------------------------------------------------------------
# commands


def cmd_world_gen(args) -> int:
    from .world import generate_worlds, save_world

    t0 = time.time()
    wcfg, _, corpus = _generator_configs(_require(args.config, "config") if args.config else None)
    count = args.count or corpus.train_worlds + corpus.unseen_worlds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for world in generate_worlds(args.seed, count, wcfg):
        save_world(world, out)
    print(f"wrote {count} worlds to {out}")
    _write_manifest(args, _manifest_for(out), [args.config], [out], t0, args.seed)
    return 0


def cmd_episodes_gen(args) -> int:
    from .world import generate_splits, load_worlds, save_episodes

    t0 = time.time()
    worlds = load_worlds(_require(args.worlds, "worlds directory"))
    _, ecfg, corpus = _generator_configs(_require(args.config, "config") if args.config else None)
    splits = generate_splits(list(worlds.values()), args.seed, corpus, ecfg)
    out = Path(args.out)
    for split, episodes in splits.items():
        save_episodes(episodes, out / f"{split}.jsonl")
        print(f"{split}: {len(episodes)} episodes")
    _write_manifest(args, _manifest_for(out), [args.worlds, args.config], [out], t0, args.seed)
    return 0


def cmd_hints_build(args) -> int:
    from .hints import build_hint_dataset, save_hints
    from .world import load_episodes, load_worlds

    t0 = time.time()
    worlds = load_worlds(_require(args.worlds, "worlds directory"))
    episodes = load_episodes(_require(args.episodes, "episodes file"))
    records = build_hint_dataset(episodes, worlds)
    out = save_hints(records, args.out)
    print(f"wrote {len(records)} hint records to {out}")
    _write_manifest(args, _manifest_for(out), [args.worlds, args.episodes], [out], t0)
    return 0


def cmd_hints_stats(args) -> int:
    from .hints import dataset_stats, load_hints

    t0 = time.time()
    by_split = {Path(p).stem: load_hints(_require(p, "hints file")) for p in args.hints}
    stats = dataset_stats(by_split)
    text = json.dumps(stats, indent=2) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_manifest(args, _manifest_for(out), args.hints, [out], t0)
    return 0


def _train_config(args):
    from .train import TrainConfig

    path = _require(args.config, "config")
    try:
        cfg = TrainConfig.from_toml(path)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    from .train import NavData, train

    t0 = time.time()
    cfg = _train_config(args)
    if not cfg.out_dir:
        raise ValidationError("no output directory: set out_dir in the config or pass --out")
    worlds = _require(cfg.worlds, "worlds directory")
    episodes = _require(Path(cfg.episodes) / f"{cfg.train_split}.jsonl" if cfg.episodes else None, "episodes file")
    hints = None
    if cfg.hint_parts:
        hints = _require(Path(cfg.hints) / f"{cfg.train_split}.jsonl" if cfg.hints else None, "hints file")
    data = NavData.load(worlds, episodes, hints)
    out = Path(cfg.out_dir)
    train(cfg, data, out_dir=out)
    print(f"trained {cfg.epochs} epochs in {time.time() - t0:.1f}s; checkpoint at {out / 'checkpoint.json'}")
    _write_manifest(args, out / "manifest.json", [args.config, worlds, episodes, hints],
                    [out / "checkpoint.json", out / "loss.csv"], t0, cfg.seed)
    return 0


def _eval_data(args, stored: dict | None):
    """Resolve worlds / episodes / gold hints from flags, then the stored training config."""
    from .train import NavData

    stored = stored or {}
    worlds = args.worlds or stored.get("worlds")
    episodes = args.episodes
    if episodes is None and stored.get("episodes"):
        episodes = Path(stored["episodes"]) / f"{args.split}.jsonl"
    gold = args.gold_hints
    if gold is None and stored.get("hints"):
        candidate = Path(stored["hints"]) / f"{args.split}.jsonl"
        gold = candidate if candidate.exists() else None
    worlds = _require(worlds, "worlds directory (--worlds)")
    episodes = _require(episodes, "episodes file (--episodes)")
    if gold is not None:
        _require(gold, "gold hints file")
    return NavData.load(worlds, episodes, gold), [worlds, episodes, gold]


def cmd_eval(args) -> int:
    from .metrics import PathPair, evaluate_pairs
    from .model import NavHintModel
    from .report import eval_report
    from .train import TrainConfig, dumps_jsonl, evaluate_split, load_rollouts, save_rollouts, teacher_hint_rows

    t0 = time.time()
    sources = [s for s in (args.checkpoint, args.trajectories) if s] + (["teacher"] if args.teacher else [])
    if len(sources) != 1:
        raise ValidationError("give exactly one of --checkpoint, --trajectories or --teacher")
    stored = None
    inputs: list = []
    if args.checkpoint:
        ckpt = _require(args.checkpoint, "checkpoint")
        model = NavHintModel.load(ckpt)
        stored = json.loads(ckpt.read_text()).get("extra", {}).get("train_config")
        inputs.append(ckpt)
    data, data_inputs = _eval_data(args, stored)
    inputs += data_inputs
    hint_rows: list[dict] = []
    if args.checkpoint:
        cfg = TrainConfig.from_mapping(stored) if stored else TrainConfig()
        report, rollouts, hint_rows = evaluate_split(model, data, cfg, mode=args.mode, decode=bool(args.hints_out))
        label, mode = args.label or Path(args.checkpoint).parent.name or "model", args.mode
    elif args.teacher:
        rollouts, hint_rows = teacher_hint_rows(data)
        label, mode = args.label or "teacher", "teacher"
        report = None
    else:
        traj = _require(args.trajectories, "trajectories file")
        inputs.append(traj)
        rollouts = load_rollouts(traj)
        label, mode = args.label or traj.stem, rollouts[0].mode if rollouts else "unknown"
        report = None
    if report is None:
        by_id = {ep.episode_id: ep for ep in data.episodes}
        missing = [r.episode_id for r in rollouts if r.episode_id not in by_id]
        if missing:
            raise ValidationError(f"trajectories reference unknown episodes, e.g. {missing[0]}")
        pairs = [PathPair(tuple(r.path), by_id[r.episode_id].path, data.worlds[r.world_id], stopped=not r.truncated)
                 for r in rollouts]
        report = evaluate_pairs(pairs)
    out = Path(args.out) if args.out else Path(args.hints_out or ".").parent / f"metrics_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(eval_report(label, args.split, mode, report.to_dict()), indent=2, sort_keys=True) + "\n")
    outputs = [out]
    if args.rollouts_out:
        outputs.append(save_rollouts(rollouts, args.rollouts_out))
    if args.hints_out:
        hints_out = Path(args.hints_out)
        hints_out.parent.mkdir(parents=True, exist_ok=True)
        hints_out.write_text(dumps_jsonl(hint_rows))
        outputs.append(hints_out)
    print(json.dumps(report.to_dict()))
    _write_manifest(args, _manifest_for(out), inputs, outputs, t0)
    return 0


def cmd_analyze(args) -> int:
    from .analysis import analyze, dumps_report, load_hint_rows
    from .report import ambiguity_plot, distinctive_plot
    from .train import load_rollouts
    from .world import load_worlds

    t0 = time.time()
    rows = load_hint_rows(_require(args.hints, "hints file"))
    rollouts = load_rollouts(_require(args.rollouts, "rollouts file")) if args.rollouts else None
    worlds = load_worlds(_require(args.worlds, "worlds directory"))
    unknown = sorted({r["world_id"] for r in rows} - set(worlds))
    if unknown:
        raise ValidationError(f"hints reference unknown worlds: {unknown[:3]}")
    report = analyze(rows, worlds, rollouts, any_true=args.any_true)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_report(report))
    outputs = [out]
    if args.svg_dir:
        svg = Path(args.svg_dir)
        svg.mkdir(parents=True, exist_ok=True)
        data = report.to_dict()
        (svg / "ambiguity.svg").write_text(ambiguity_plot(data))
        (svg / "distinctive.svg").write_text(distinctive_plot(data))
        outputs += [svg / "ambiguity.svg", svg / "distinctive.svg"]
    print(dumps_report(report), end="")
    _write_manifest(args, _manifest_for(out), [args.hints, args.rollouts, args.worlds], outputs, t0)
    return 0


def cmd_gradcheck(args) -> int:
    from .model import PARAM_GROUPS, grad_check
    from .train import NavData, build_model, corpus_vocab, probe_loss_fn
    from .hints import build_hint_dataset
    from .world import generate_episode, generate_world

    t0 = time.time()
    cfg = _train_config(args)
    if cfg.worlds and cfg.episodes:
        data = NavData.load(_require(cfg.worlds, "worlds directory"),
                            _require(Path(cfg.episodes) / f"{cfg.train_split}.jsonl", "episodes file"),
                            Path(cfg.hints) / f"{cfg.train_split}.jsonl" if cfg.hints else None)
    else:
        world = generate_world(cfg.seed)
        ep = generate_episode(world, cfg.seed)
        data = NavData({world.world_id: world}, [ep])
        for rec in build_hint_dataset([ep], data.worlds):
            data.hints.setdefault(rec.episode_id, []).append(rec)
    ep = data.episodes[0]
    model = build_model(corpus_vocab(data), cfg)
    loss_fn = probe_loss_fn(model, ep, data.worlds[ep.world_id], cfg, data.gold_hints(ep, cfg.hint_parts))
    report = grad_check(model.params, loss_fn, PARAM_GROUPS, samples=args.samples, h=args.h,
                        tolerance=args.tolerance, seed=cfg.seed)
    print(report.summary())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        _write_manifest(args, _manifest_for(out), [args.config], [out], t0, cfg.seed)
    if not report.passed:
        raise CheckFailure(f"max relative error {report.max_rel_error:.3e} exceeds {report.tolerance:g}")
    return 0


def cmd_report(args) -> int:
    from .report import ambiguity_plot, distinctive_plot, load_json_report, merged_table, navigation_plot

    t0 = time.time()
    evals = [load_json_report(_require(p, "eval report"), "eval") for p in args.eval]
    analyses = [load_json_report(_require(p, "analysis report"), "analysis") for p in (args.analyze or [])]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(merged_table(evals, analyses))
    outputs = [out / "report.csv"]
    if not args.no_plots:
        (out / "navigation.svg").write_text(navigation_plot(evals))
        outputs.append(out / "navigation.svg")
        if analyses:
            for i, qa in enumerate(analyses):
                suffix = "" if len(analyses) == 1 else f"_{i}"
                (out / f"ambiguity{suffix}.svg").write_text(ambiguity_plot(qa))
                (out / f"distinctive{suffix}.svg").write_text(distinctive_plot(qa))
                outputs += [out / f"ambiguity{suffix}.svg", out / f"distinctive{suffix}.svg"]
        else:
            print("notice: no analysis input; hint-quality plots skipped", file=sys.stderr)
    print((out / "report.csv").read_text(), end="")
    _write_manifest(args, out / "manifest.json", [*args.eval, *(args.analyze or [])], outputs, t0)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add(sub, name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.set_defaults(func=func)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navhint", description="Navigation hint laboratory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    top = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    world = top.add_parser("world", help="world generation").add_subparsers(dest="sub", required=True)
    p = _add(world, "gen", cmd_world_gen, "Generate world files.")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", type=Path, help="TOML with optional [world] and [corpus] tables")
    p.add_argument("--count", type=int, help="number of worlds (default: corpus train + unseen worlds)")
    p.add_argument("--out", type=Path, required=True)

    episodes = top.add_parser("episodes", help="episode generation").add_subparsers(dest="sub", required=True)
    p = _add(episodes, "gen", cmd_episodes_gen, "Generate train/seen/unseen episode splits.")
    p.add_argument("--worlds", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", type=Path, help="TOML with optional [episodes] and [corpus] tables")
    p.add_argument("--out", type=Path, required=True, help="directory for <split>.jsonl")

    hints = top.add_parser("hints", help="hint dataset").add_subparsers(dest="sub", required=True)
    p = _add(hints, "build", cmd_hints_build, "Build hint records for an episode file.")
    p.add_argument("--worlds", type=Path, required=True)
    p.add_argument("--episodes", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p = _add(hints, "stats", cmd_hints_stats, "Ambiguity-category histogram of hint files.")
    p.add_argument("--hints", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path)

    p = _add(top, "train", cmd_train, "Train the agent and hint generator.")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int)

    p = _add(top, "eval", cmd_eval, "Evaluate a checkpoint, stored trajectories or the teacher policy.")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--trajectories", type=Path, help="rollouts JSONL to score")
    p.add_argument("--teacher", action="store_true", help="score ground-truth rollouts with gold hints")
    p.add_argument("--split", default="unseen")
    p.add_argument("--worlds", type=Path)
    p.add_argument("--episodes", type=Path)
    p.add_argument("--gold-hints", type=Path)
    p.add_argument("--mode", choices=("greedy", "sample", "teacher"), default="greedy")
    p.add_argument("--label")
    p.add_argument("--out", type=Path, help="metrics JSON")
    p.add_argument("--hints-out", type=Path, help="per-step generated hints JSONL")
    p.add_argument("--rollouts-out", type=Path)

    p = _add(top, "analyze", cmd_analyze, "Hint-quality analysis of generated hints.")
    p.add_argument("--hints", type=Path, required=True)
    p.add_argument("--rollouts", type=Path)
    p.add_argument("--worlds", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--any-true", action="store_true", help="a clause is TRUE if any listed landmark matches")
    p.add_argument("--svg-dir", type=Path)

    p = _add(top, "gradcheck", cmd_gradcheck, "Compare analytic and finite-difference gradients.")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", type=Path)

    p = _add(top, "report", cmd_report, "Merge eval and analysis reports into tables and plots.")
    p.add_argument("--eval", type=Path, nargs="+", required=True)
    p.add_argument("--analyze", type=Path, nargs="*")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    args.command_name = " ".join(x for x in (args.command, getattr(args, "sub", None)) if x)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (NavHintError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
