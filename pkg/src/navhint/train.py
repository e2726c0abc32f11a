"""Rollouts, joint training and split evaluation."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import TrainingAbort
from .hints import HINT_PARTS, HintRecord, detokenize_hint, load_hints, render_hint, tokenize_hint
from .metrics import MetricReport, PathPair, evaluate_pairs
from .model import ModelConfig, NavHintModel, Vocab, discounted_returns, nav_loss, total_loss
from .seeding import rng_for
from .world import Episode, World, load_episodes, load_worlds, move_heading, relative_views, shortest_path

log = logging.getLogger(__name__)

STOP = -1  # action index marker in records; model-side STOP is index n


@dataclass
class TrainConfig:
    seed: int = 0
    lam: float = 0.2
    epochs: int = 14
    lr: float = 1e-3
    # cosine decay from lr to lr_final over the run; equal values keep lr constant
    lr_final: float = 1e-4
    hint_parts: tuple[str, ...] = ("sub", "ambiguity", "distinctive")
    single_clause: bool = False
    prefix_len: int = 10
    max_hint_tokens: int = 80
    d: int = 32
    gamma: float = 0.9
    clip_norm: float = 5.0
    slack: int = 4
    episode_cap: int | None = None
    success_reward: float = 2.0
    # data locations: a directory of world files and directories holding <split>.jsonl
    worlds: str = ""
    episodes: str = ""
    hints: str = ""
    train_split: str = "train"
    out_dir: str = ""

    def __post_init__(self):
        self.hint_parts = tuple(sorted(set(self.hint_parts)))
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not set(self.hint_parts) <= HINT_PARTS:
            raise ValueError(f"unknown hint parts {sorted(set(self.hint_parts) - HINT_PARTS)}")
        if self.prefix_len < 1:
            raise ValueError("prefix_len must be >= 1")

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        kw = dict(raw)
        if "hint_parts" in kw:
            kw["hint_parts"] = tuple(kw["hint_parts"])
        return cls(**kw)

    @classmethod
    def from_toml(cls, path: str | Path) -> "TrainConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        base = Path(path).parent
        for key in ("worlds", "episodes", "hints", "out_dir"):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        return cls.from_mapping(raw)


@dataclass
class NavData:
    worlds: dict[str, World]
    episodes: list[Episode]
    hints: dict[str, list[HintRecord]] = field(default_factory=dict)

    @classmethod
    def load(cls, worlds_dir: str | Path, episodes_path: str | Path, hints_path: str | Path | None = None
             ) -> "NavData":
        worlds = load_worlds(worlds_dir)
        episodes = load_episodes(episodes_path)
        hints: dict[str, list[HintRecord]] = {}
        if hints_path:
            for r in load_hints(hints_path):
                hints.setdefault(r.episode_id, []).append(r)
        return cls(worlds, episodes, hints)

    @classmethod
    def load_split(cls, worlds_dir: str | Path, episodes_dir: str | Path, hints_dir: str | Path | None,
                   split: str) -> "NavData":
        hints_path = Path(hints_dir) / f"{split}.jsonl" if hints_dir else None
        return cls.load(worlds_dir, Path(episodes_dir) / f"{split}.jsonl", hints_path)

    def gold_hints(self, episode: Episode, parts: Sequence[str], single_clause: bool = False
                   ) -> list[list[str]] | None:
        """Gold hint tokens per hop with disabled parts left out of the rendering."""
        if not parts or episode.episode_id not in self.hints:
            return None
        recs = sorted(self.hints[episode.episode_id], key=lambda r: r.step_index)
        return [tokenize_hint(render_hint(r, parts, single_clause)) for r in recs]


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class StepRecord:
    node: int
    heading: float
    candidates: list[int]
    probs: list[float]
    teacher: int          # index into candidates, STOP (-1) at the goal
    action: int           # index into candidates, STOP (-1) to stop
    reward: float = 0.0
    gold_hint: list[str] | None = None
    generated: list[str] | None = None


@dataclass
class RolloutRecord:
    episode_id: str
    world_id: str
    mode: str
    steps: list[StepRecord]
    path: list[int]
    truncated: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutRecord":
        return cls(d["episode_id"], d["world_id"], d["mode"], [StepRecord(**s) for s in d["steps"]],
                   list(d["path"]), bool(d["truncated"]))


@dataclass
class _Trace:
    record: RolloutRecord
    log_probs: list[T.Tensor]
    actions: list[int]          # model-side indices (STOP = n)
    hint_loss: T.Tensor | None


def teacher_index(world: World, node: int, goal: int, candidates: Sequence[int]) -> int:
    if node == goal:
        return STOP
    nxt = shortest_path(world, node, goal)[1]
    return list(candidates).index(nxt)


def rollout(model: NavHintModel, episode: Episode, world: World, mode: str = "greedy",
            rng: np.random.Generator | None = None, gold_hints: Sequence[Sequence[str]] | None = None,
            decode: bool = False, slack: int = 4, success_reward: float = 2.0,
            d_th: float = 3.0, actions: Sequence[int] | None = None, score_hints: bool = True) -> _Trace:
    """Run one episode.

    ``mode`` is ``teacher`` (follow the ground-truth path), ``sample`` (draw
    from the action distribution) or ``greedy`` (argmax). ``actions`` replays
    a fixed action sequence instead, which makes the loss a deterministic
    function of the parameters.
    """
    if mode not in ("teacher", "sample", "greedy"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None and actions is None:
        raise ValueError("sample mode needs an rng")
    goal = episode.goal
    path = episode.path
    hops = len(path) - 1
    max_moves = hops + slack
    x = model.encode_instruction(episode.instruction)
    instr_ids = model.vocab.encode(episode.instruction)
    s = model.initial_state()
    node = path[0]
    heading = move_heading(world, path[0], path[1])
    visited = [node]
    steps: list[StepRecord] = []
    log_probs: list[T.Tensor] = []
    taken: list[int] = []
    hint_terms: list[T.Tensor] = []
    truncated = False
    t = 0
    while True:
        views = relative_views(world, node, heading)
        cands = [v.neighbor for v in views]
        n = len(cands)
        teacher = teacher_index(world, node, goal, cands)
        on_path = mode == "teacher" or (t < hops and visited == list(path[: t + 1]))
        gold = gold_hints[t] if gold_hints is not None and t < hops and on_path else None
        need_prefix = gold is not None or decode
        out = model.step(x, s, views, with_prefix=need_prefix, t=t)
        probs = out.probs.data
        if actions is not None:
            a = actions[t]
        elif mode == "teacher":
            a = n if teacher == STOP else teacher
        elif mode == "greedy":
            a = int(np.argmax(probs))
        else:
            a = int(rng.choice(n + 1, p=probs / probs.sum()))
        if mode != "teacher" and t >= max_moves and a != n:
            a = n
            truncated = True
        generated = None
        if decode and a != n:
            generated = model.decode_hint_greedy(out.prefix, instr_ids)
        if score_hints and gold is not None and gold:
            hint_terms.append(model.hint_loss(out.prefix, instr_ids, gold))
        log_probs.append(out.log_probs)
        taken.append(a)
        rec = StepRecord(node, heading, cands, probs.tolist(), teacher, STOP if a == n else a,
                         gold_hint=list(gold) if gold is not None else None, generated=generated)
        steps.append(rec)
        if a == n:
            dist = world.dijkstra(node)[0][goal]
            rec.reward = success_reward if (dist <= d_th and not truncated) else -success_reward
            break
        nxt = cands[a]
        d_prev, d_next = world.dijkstra(node)[0][goal], world.dijkstra(nxt)[0][goal]
        rec.reward = d_prev - d_next
        heading = move_heading(world, node, nxt)
        node = nxt
        visited.append(node)
        s = out.s_next
        t += 1
    hint_loss = None
    if hint_terms:
        hint_loss = hint_terms[0]
        for h in hint_terms[1:]:
            hint_loss = hint_loss + h
    record = RolloutRecord(episode.episode_id, episode.world_id, mode, steps, visited, truncated)
    return _Trace(record, log_probs, taken, hint_loss)


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: Sequence[T.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def clip_grad_norm(params: Sequence[T.Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def episode_loss(model: NavHintModel, episode: Episode, world: World, cfg: TrainConfig,
                 gold: Sequence[Sequence[str]] | None, rng: np.random.Generator | None,
                 sample_actions: Sequence[int] | None = None) -> tuple[T.Tensor, float, float, _Trace | None]:
    """Joint loss for one episode: teacher pass (IL + hints) and, when lam > 0, a sampled pass (RL)."""
    teach = rollout(model, episode, world, "teacher", gold_hints=gold, slack=cfg.slack,
                    success_reward=cfg.success_reward)
    sample = None
    s_lp: list[T.Tensor] = []
    s_act: list[int] = []
    adv: list[float] = []
    if cfg.lam > 0:
        sample = rollout(model, episode, world, "sample", rng=rng, slack=cfg.slack,
                         success_reward=cfg.success_reward, actions=sample_actions)
        s_lp, s_act = sample.log_probs, sample.actions
        adv = discounted_returns([st.reward for st in sample.record.steps], cfg.gamma)
    l_nav = nav_loss(teach.log_probs, teach.actions, s_lp, s_act, adv, cfg.lam)
    l_hint = teach.hint_loss if teach.hint_loss is not None else 0.0
    loss = total_loss(l_hint, l_nav)
    hint_value = float(l_hint.data) if isinstance(l_hint, T.Tensor) else 0.0
    return loss, hint_value, float(l_nav.data), sample


def build_model(data_vocab: Vocab, cfg: TrainConfig) -> NavHintModel:
    return NavHintModel(data_vocab, ModelConfig(d=cfg.d, prefix_len=cfg.prefix_len,
                                                max_hint_tokens=cfg.max_hint_tokens, seed=cfg.seed))


def corpus_vocab(data: NavData) -> Vocab:
    corpus = [ep.instruction for ep in data.episodes]
    corpus += [tokenize_hint(r.rendered) for rs in data.hints.values() for r in rs]
    return Vocab.build(corpus)


def train_epoch(model: NavHintModel, opt: Adam, data: NavData, cfg: TrainConfig, epoch: int,
                rng: np.random.Generator) -> list[dict]:
    """One pass over (a seeded permutation of) the training episodes, one update per episode."""
    order = rng.permutation(len(data.episodes))
    if cfg.episode_cap:
        order = order[: cfg.episode_cap]
    trace = []
    params = model.parameters()
    for i, idx in enumerate(order):
        ep = data.episodes[int(idx)]
        world = data.worlds[ep.world_id]
        gold = data.gold_hints(ep, cfg.hint_parts, cfg.single_clause)
        model.zero_grad()
        loss, l_hint, l_nav, _ = episode_loss(model, ep, world, cfg, gold, rng)
        if not math.isfinite(float(loss.data)):
            raise TrainingAbort(f"non-finite loss at epoch {epoch} episode {ep.episode_id}")
        loss.backward()
        grad_norm = clip_grad_norm(params, cfg.clip_norm)
        opt.step()
        trace.append({"epoch": epoch, "step": i, "episode_id": ep.episode_id, "loss": float(loss.data),
                      "hint_loss": l_hint, "nav_loss": l_nav, "grad_norm": grad_norm})
    return trace


def train(cfg: TrainConfig, data: NavData, vocab: Vocab | None = None, out_dir: str | Path | None = None,
          eval_data: NavData | None = None) -> tuple[NavHintModel, list[dict]]:
    """Train from scratch; writes checkpoints and a loss CSV when ``out_dir`` is given."""
    vocab = vocab or corpus_vocab(data)
    model = build_model(vocab, cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = rng_for(cfg.seed, "train/order")
    trace: list[dict] = []
    out = Path(out_dir) if out_dir else None
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(cfg, epoch)
        last_good = {name: t.data.copy() for name, t in model.params.items()}
        try:
            rows = train_epoch(model, opt, data, cfg, epoch, rng)
        except TrainingAbort:
            if out is not None:
                for name, arr in last_good.items():
                    model.params[name].data = arr
                model.save(out / "checkpoint_last_good.json", extra={"train_config": asdict(cfg)})
            raise
        trace.extend(rows)
        msg = f"epoch {epoch}: mean loss {np.mean([r['loss'] for r in rows]):.3f}"
        if eval_data is not None:
            report, _, _ = evaluate_split(model, eval_data, cfg, decode=False)
            msg += f" | eval SR {report.sr:.3f}"
        log.info(msg)
    if out is not None:
        model.save(out / "checkpoint.json", extra={"train_config": asdict(cfg)})
        (out / "loss.csv").write_text(loss_csv(trace))
    return model, trace


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for ``epoch`` under the cosine schedule."""
    if cfg.epochs <= 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))


def loss_csv(trace: Sequence[dict]) -> str:
    buf = io.StringIO()
    cols = ["epoch", "step", "episode_id", "loss", "hint_loss", "nav_loss", "grad_norm"]
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in trace:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# evaluation


def evaluate_split(model: NavHintModel, data: NavData, cfg: TrainConfig | None = None, mode: str = "greedy",
                   decode: bool = True) -> tuple[MetricReport, list[RolloutRecord], list[dict]]:
    """Roll out every episode, score the paths and collect per-step generated hints."""
    cfg = cfg or TrainConfig()
    parts = cfg.hint_parts
    decode = decode and bool(parts)
    rng = rng_for(cfg.seed, "eval/sample") if mode == "sample" else None
    rollouts: list[RolloutRecord] = []
    pairs = []
    hint_rows: list[dict] = []
    with T.no_grad():
        for ep in data.episodes:
            world = data.worlds[ep.world_id]
            gold = data.gold_hints(ep, parts, cfg.single_clause) if parts else None
            trace = rollout(model, ep, world, mode, rng=rng, gold_hints=gold, decode=decode, slack=cfg.slack,
                            success_reward=cfg.success_reward, score_hints=False)
            rec = trace.record
            rollouts.append(rec)
            pairs.append(PathPair(tuple(rec.path), ep.path, world, stopped=not rec.truncated))
            if decode:
                hint_rows.extend(_hint_rows(rec))
    return evaluate_pairs(pairs), rollouts, hint_rows


def _hint_rows(rec: RolloutRecord) -> list[dict]:
    """One row per step that produced a hint; gold is present only while the agent is on the reference path."""
    rows = []
    for t, st in enumerate(rec.steps):
        if st.generated is None:
            continue
        gold_tokens = st.gold_hint
        rows.append({
            "episode_id": rec.episode_id, "world_id": rec.world_id, "step": t, "node": st.node,
            "selected": st.candidates[st.action] if st.action != STOP else None,
            "teacher": st.candidates[st.teacher] if st.teacher != STOP else None,
            "generated": detokenize_hint(st.generated),
            "gold": detokenize_hint(gold_tokens) if gold_tokens is not None else None,
        })
    return rows


def teacher_hint_rows(data: NavData, parts: Sequence[str] = ("sub", "ambiguity", "distinctive")
                      ) -> tuple[list[RolloutRecord], list[dict]]:
    """Teacher rollouts with the gold hints standing in for generated ones (closed-loop oracle input)."""
    rollouts, rows = [], []
    for ep in data.episodes:
        world = data.worlds[ep.world_id]
        gold = data.gold_hints(ep, parts)
        steps = []
        heading = move_heading(world, ep.path[0], ep.path[1])
        for t, node in enumerate(ep.path):
            cands = [v.neighbor for v in relative_views(world, node, heading)]
            teacher = teacher_index(world, node, ep.goal, cands)
            generated = gold[t] if gold is not None and t < len(gold) else None
            steps.append(StepRecord(node, heading, cands, [], teacher, teacher, 0.0, generated, generated))
            if t + 1 < len(ep.path):
                heading = move_heading(world, node, ep.path[t + 1])
        rec = RolloutRecord(ep.episode_id, ep.world_id, "teacher", steps, list(ep.path), False)
        rollouts.append(rec)
        rows.extend(_hint_rows(rec))
    return rollouts, rows


def truncate_episode(episode: Episode, hops: int) -> Episode:
    """The first ``hops`` hops of an episode with the matching instruction prefix."""
    hops = max(1, min(hops, len(episode.path) - 1))
    spans = list(episode.spans[:hops])
    end = spans[-1].end_token
    return Episode(episode.episode_id, episode.world_id, tuple(episode.path[: hops + 1]),
                   tuple(episode.instruction[:end]), tuple(spans))


def probe_loss_fn(model: NavHintModel, episode: Episode, world: World, cfg: TrainConfig,
                  gold: Sequence[Sequence[str]] | None, hops: int = 2):
    """Deterministic joint loss on a short episode for gradient checking.

    The sampled pass is drawn once and then replayed, so the RL term acts as
    fixed-advantage REINFORCE and the loss is a smooth function of the parameters.
    """
    ep = truncate_episode(episode, hops)
    gold = list(gold[:hops]) if gold is not None else None
    actions = None
    if cfg.lam > 0:
        with T.no_grad():
            trace = rollout(model, ep, world, "sample", rng=rng_for(cfg.seed, "gradcheck/sample"),
                            slack=cfg.slack, success_reward=cfg.success_reward, score_hints=False)
        actions = trace.actions

    def loss_fn() -> T.Tensor:
        return episode_loss(model, ep, world, cfg, gold, None, sample_actions=actions)[0]

    return loss_fn


def dumps_jsonl(rows: Sequence[dict]) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)


def save_rollouts(rollouts: Sequence[RolloutRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_jsonl([r.to_dict() for r in rollouts]))
    return path


def load_rollouts(path: str | Path) -> list[RolloutRecord]:
    with open(path) as fh:
        return [RolloutRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
