"""Recurrent navigation agent with a prefix-conditioned hint decoder.

Per step the agent runs one cross-modal attention layer over the instruction
and the stacked ``[state; candidate views]``, scores the contextual views
(plus a learned STOP candidate) against the contextual state, and updates
the state. The action distribution reweights the contextual views; their pooled
sum is mapped to ``k`` prefix vectors that, followed by the instruction
embeddings, condition a one-block causal decoder that writes the hint.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import SchemaError, ShapeError, TrainingAbort, UndefinedInputError
from .lexicon import Lexicon, load_lexicon, pluralize
from .tensor import Tensor
from .world import CandidateView

CHECKPOINT_VERSION = "1.0"
MAX_STEPS = 16  # step embeddings beyond this share the last row
UNK, BOS, EOH = "<unk>", "<bos>", "<eoh>"
SPECIALS = (UNK, BOS, EOH)
HINT_TEMPLATE_WORDS = (
    "The", "needs", "to", "be", "executed", ".", "are", "observed", "in", "multiple",
    "viewpoints", "misleading", "not", "However", ",", "targeted", "view",
)


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        rest = sorted(set(tokens) - set(SPECIALS))
        self.itos: list[str] = list(SPECIALS) + rest
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def bos(self) -> int:
        return self.stoi[BOS]

    @property
    def eoh(self) -> int:
        return self.stoi[EOH]

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]] = (), lexicon: Lexicon | None = None) -> "Vocab":
        """Lexicon words, hint template words and every corpus token."""
        lex = lexicon or load_lexicon()
        words = set(HINT_TEMPLATE_WORDS) | lex.nouns | lex.attributes | lex.motion_words
        words |= {pluralize(n) for n in lex.pluralizable}
        for seq in corpus:
            words.update(seq)
        return cls(words)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    prefix_len: int = 10
    max_hint_tokens: int = 80
    ffn_mult: int = 2
    seed: int = 0


@dataclass
class StepOutput:
    x_hat: Tensor
    s_hat: Tensor
    v_hat: Tensor
    s_next: Tensor
    probs: Tensor        # (n + 1,), last entry is STOP
    log_probs: Tensor
    v_weighted: Tensor   # (n, d)
    prefix: Tensor       # (k, d)


PARAM_GROUPS = {
    "embedding": ("tok_emb",),
    "vision": ("vis_w1", "vis_b1", "vis_w2", "vis_b2"),
    "cross_modal": ("xm_q1", "xm_k1", "xm_v1", "xm_o1", "xm_ln1_g", "xm_ln1_b",
                    "xm_q2", "xm_k2", "xm_v2", "xm_o2", "xm_ln2_g", "xm_ln2_b"),
    "state": ("act_q", "act_k", "act_v", "stop_key", "lang_q", "state_w", "state_b", "state_init", "step_emb"),
    "prefix": ("pre_w1", "pre_b1", "pre_w2", "pre_b2"),
    "decoder": ("dec_ln1_g", "dec_ln1_b", "dec_q", "dec_k", "dec_v", "dec_o",
                "dec_ln2_g", "dec_ln2_b", "dec_f1", "dec_fb1", "dec_f2", "dec_fb2",
                "dec_lnf_g", "dec_lnf_b", "out_w", "out_b"),
}


def positional_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / d))
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def orientation_features(views: Sequence[CandidateView]) -> np.ndarray:
    return np.array([[math.sin(v.heading), math.cos(v.heading), math.sin(v.elevation), math.cos(v.elevation)]
                     for v in views])


class NavHintModel:
    """Parameters plus the forward pieces of the agent and the hint decoder."""

    def __init__(self, vocab: Vocab, cfg: ModelConfig = ModelConfig()):
        self.vocab = vocab
        self.cfg = cfg
        self.lexicon = load_lexicon()
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(cfg.seed))
        self._pe = positional_encoding(512, cfg.d)
        self._mask_cache: dict[int, np.ndarray] = {}
        self._noun_ids: dict[str, int] = {}

    # -- parameters ---------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> None:
        d, V, k, h = self.cfg.d, len(self.vocab), self.cfg.prefix_len, self.cfg.d * self.cfg.ffn_mult

        def w(*shape, fan_in=None):
            return rng.normal(0.0, 1.0 / math.sqrt(fan_in or shape[0]), size=shape)

        p = {
            "tok_emb": rng.normal(0.0, 0.5, size=(V, d)),
            "vis_w1": w(d + 4, d), "vis_b1": np.zeros(d), "vis_w2": w(d, d), "vis_b2": np.zeros(d),
            "state_init": rng.normal(0.0, 0.5, size=d),
            "step_emb": rng.normal(0.0, 0.1, size=(MAX_STEPS, d)),
            "stop_key": rng.normal(0.0, 0.5, size=d),
            "act_q": w(d, d), "act_k": w(d, d), "act_v": w(d, d), "lang_q": w(d, d),
            "state_w": w(3 * d, d), "state_b": np.zeros(d),
            "pre_w1": w(d, d), "pre_b1": np.zeros(d), "pre_w2": w(d, k * d), "pre_b2": rng.normal(0, 0.1, k * d),
            "dec_f1": w(d, h), "dec_fb1": np.zeros(h), "dec_f2": w(h, d), "dec_fb2": np.zeros(d),
            "out_w": w(d, V), "out_b": np.zeros(V),
        }
        for name in ("xm_q1", "xm_k1", "xm_v1", "xm_o1", "xm_q2", "xm_k2", "xm_v2", "xm_o2",
                     "dec_q", "dec_k", "dec_v", "dec_o"):
            p[name] = w(d, d)
        for name in ("xm_ln1", "xm_ln2", "dec_ln1", "dec_ln2", "dec_lnf"):
            p[name + "_g"] = np.ones(d)
            p[name + "_b"] = np.zeros(d)
        self.params = {name: Tensor(p[name], requires_grad=True)
                       for group in PARAM_GROUPS.values() for name in group}

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        T.zero_grad(self.parameters())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self.params.items()}

    # -- encoders -----------------------------------------------------------

    def encode_instruction(self, tokens: Sequence[str] | Sequence[int]) -> Tensor:
        """Token embedding plus sinusoidal position, one row per token."""
        ids = self._ids(tokens)
        if not ids:
            raise UndefinedInputError("empty instruction")
        return self.params["tok_emb"][np.asarray(ids)] + self._pe[: len(ids)]

    def _ids(self, tokens) -> list[int]:
        tokens = list(tokens)
        if tokens and isinstance(tokens[0], str):
            return self.vocab.encode(tokens)
        return [int(t) for t in tokens]

    def _noun_id(self, head_noun: str) -> int:
        if head_noun not in self._noun_ids:
            self._noun_ids[head_noun] = self.vocab.encode([self.lexicon.singularize(head_noun)])[0]
        return self._noun_ids[head_noun]

    def encode_vision(self, views: Sequence[CandidateView]) -> Tensor:
        """Mean head-noun embedding per view, joined with [sin a, cos a, sin b, cos b], through an MLP."""
        if not views:
            raise UndefinedInputError("no candidate views")
        ids: list[int] = []
        pool = np.zeros((len(views), sum(len(v.objects) for v in views)))
        for i, view in enumerate(views):
            if not view.objects:
                raise UndefinedInputError(f"view toward {view.neighbor} has no objects")
            for obj in view.objects:
                pool[i, len(ids)] = 1.0 / len(view.objects)
                ids.append(self._noun_id(obj.head_noun))
        emb = Tensor(pool) @ self.params["tok_emb"][np.asarray(ids)]
        feats = T.concat([emb, Tensor(orientation_features(views))], axis=1)
        p = self.params
        hidden = T.tanh(T.linear(feats, p["vis_w1"], p["vis_b1"]))
        return T.linear(hidden, p["vis_w2"], p["vis_b2"])

    def initial_state(self) -> Tensor:
        return self.params["state_init"]

    # -- navigation ---------------------------------------------------------

    def cross_modal_step(self, x: Tensor, s: Tensor, v: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """[state; views] attend to the instruction and the instruction attends back."""
        d = self.cfg.d
        if x.data.ndim != 2 or x.shape[1] != d or s.shape != (d,) or v.data.ndim != 2 or v.shape[1] != d:
            raise ShapeError(f"cross_modal_step got X{x.shape}, S{s.shape}, V{v.shape} for d={d}")
        p = self.params
        sv = T.concat([s.reshape(1, d), v], axis=0)
        # view queries carry the state so each view reads the part of the instruction still ahead
        sv_query = T.concat([s.reshape(1, d), v + s], axis=0)
        ctx = T.attention(sv_query @ p["xm_q1"], x @ p["xm_k1"], x @ p["xm_v1"]) @ p["xm_o1"]
        sv_hat = T.layer_norm(sv + ctx, p["xm_ln1_g"], p["xm_ln1_b"])
        back = T.attention(x @ p["xm_q2"], sv @ p["xm_k2"], sv @ p["xm_v2"]) @ p["xm_o2"]
        x_hat = T.layer_norm(x + back, p["xm_ln2_g"], p["xm_ln2_b"])
        return x_hat, sv_hat[0], sv_hat[1:]

    def action_scores(self, s_hat: Tensor, v_hat: Tensor) -> tuple[Tensor, Tensor]:
        """Scaled dot scores of the state against [views; STOP] and the key matrix."""
        if v_hat.shape[0] == 0:
            raise UndefinedInputError("no candidates to score")
        p = self.params
        keys = T.concat([v_hat, p["stop_key"].reshape(1, self.cfg.d)], axis=0)
        scores = (keys @ p["act_k"]) @ (s_hat @ p["act_q"]) * (1.0 / math.sqrt(self.cfg.d))
        return scores, keys

    def action_attention(self, s_hat: Tensor, v_hat: Tensor, x_hat: Tensor | None = None
                         ) -> tuple[Tensor, Tensor, Tensor]:
        """Next state, action distribution over n views + STOP, and its log."""
        p = self.params
        scores, keys = self.action_scores(s_hat, v_hat)
        log_probs = T.log_softmax(scores)
        probs = T.exp(log_probs)
        attended = probs @ (keys @ p["act_v"])
        if x_hat is None:
            lang = T.Tensor(np.zeros(self.cfg.d))
        else:
            w = T.softmax((x_hat @ (s_hat @ p["lang_q"])) * (1.0 / math.sqrt(self.cfg.d)))
            lang = w @ x_hat
        s_next = T.tanh(T.linear(T.concat([s_hat, attended, lang]), p["state_w"], p["state_b"]))
        return s_next, probs, log_probs

    @staticmethod
    def weighted_vision(probs: Tensor, v_hat: Tensor) -> Tensor:
        """Scale each view row by its action probability (STOP mass dropped, renormalized)."""
        n = v_hat.shape[0]
        view_probs = probs[:n]
        view_probs = view_probs / view_probs.sum()
        return view_probs.reshape(n, 1) * v_hat

    def map_prefix(self, v_weighted: Tensor) -> Tensor:
        """Pool the weighted views and map them to k decoder-space vectors."""
        p = self.params
        pooled = v_weighted.sum(axis=0)
        hidden = T.tanh(T.linear(pooled, p["pre_w1"], p["pre_b1"]))
        return T.linear(hidden, p["pre_w2"], p["pre_b2"]).reshape(self.cfg.prefix_len, self.cfg.d)

    def step(self, x: Tensor, s: Tensor, views: Sequence[CandidateView], with_prefix: bool = True,
             t: int = 0) -> StepOutput:
        v = self.encode_vision(views)
        s = s + self.params["step_emb"][min(t, MAX_STEPS - 1)]
        x_hat, s_hat, v_hat = self.cross_modal_step(x, s, v)
        s_next, probs, log_probs = self.action_attention(s_hat, v_hat, x_hat)
        v_weighted = self.weighted_vision(probs, v_hat) if with_prefix else None
        prefix = self.map_prefix(v_weighted) if with_prefix else None
        return StepOutput(x_hat, s_hat, v_hat, s_next, probs, log_probs, v_weighted, prefix)

    # -- hint decoder -------------------------------------------------------

    def _causal_mask(self, length: int) -> np.ndarray:
        if length not in self._mask_cache:
            self._mask_cache[length] = np.triu(np.full((length, length), -1e9), k=1)
        return self._mask_cache[length]

    def decoder_logits(self, prefix: Tensor, instruction_ids: Sequence[int], hint_in: Sequence[int],
                       n_out: int) -> Tensor:
        """Logits for the last ``n_out`` positions of [prefix; instruction; hint_in]."""
        p = self.params
        ids = np.asarray(list(instruction_ids) + list(hint_in))
        seq = T.concat([prefix, p["tok_emb"][ids]], axis=0)
        length = seq.shape[0]
        if length > self._pe.shape[0]:
            self._pe = positional_encoding(2 * length, self.cfg.d)
        h = seq + self._pe[:length]
        a = T.layer_norm(h, p["dec_ln1_g"], p["dec_ln1_b"])
        h = h + T.attention(a @ p["dec_q"], a @ p["dec_k"], a @ p["dec_v"], self._causal_mask(length)) @ p["dec_o"]
        a = T.layer_norm(h, p["dec_ln2_g"], p["dec_ln2_b"])
        h = h + T.linear(T.tanh(T.linear(a, p["dec_f1"], p["dec_fb1"])), p["dec_f2"], p["dec_fb2"])
        tail = h[length - n_out:]
        tail = T.layer_norm(tail, p["dec_lnf_g"], p["dec_lnf_b"])
        return T.linear(tail, p["out_w"], p["out_b"])

    def hint_loss(self, prefix: Tensor, instruction: Sequence[str] | Sequence[int],
                  gold: Sequence[str] | Sequence[int]) -> Tensor:
        """Teacher-forced negative log-likelihood of the gold hint (end marker appended if missing)."""
        gold_ids = self._ids(gold)
        if not gold_ids or gold_ids[-1] != self.vocab.eoh:
            gold_ids = gold_ids + [self.vocab.eoh]
        gold_ids = gold_ids[: self.cfg.max_hint_tokens]
        hint_in = [self.vocab.bos] + gold_ids[:-1]
        logits = self.decoder_logits(prefix, self._ids(instruction), hint_in, len(gold_ids))
        logp = T.log_softmax(logits, axis=-1)
        return T.nll(logp, gold_ids)

    def decode_hint_greedy(self, prefix: Tensor, instruction: Sequence[str] | Sequence[int],
                           max_tokens: int | None = None) -> list[str]:
        """Argmax decoding until the end marker or the token budget; ties go to the lowest id."""
        max_tokens = max_tokens or self.cfg.max_hint_tokens
        instr = self._ids(instruction)
        out: list[int] = []
        with T.no_grad():
            prefix = Tensor(prefix.data)
            while len(out) < max_tokens:
                logits = self.decoder_logits(prefix, instr, [self.vocab.bos] + out, 1)
                nxt = int(np.argmax(logits.data[-1]))
                if nxt == self.vocab.eoh:
                    break
                out.append(nxt)
        return self.vocab.decode(out)

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "checkpoint_version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "vocab": self.vocab.itos,
            "shapes": {name: list(t.shape) for name, t in self.params.items()},
            "params": {name: t.data.ravel().tolist() for name, t in self.params.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        _check_version(state)
        expected = {name: list(t.shape) for name, t in self.params.items()}
        if state["shapes"] != expected:
            diff = sorted(k for k in set(expected) | set(state["shapes"])
                          if expected.get(k) != state["shapes"].get(k))
            raise ShapeError(f"checkpoint shapes do not match the model: {diff}")
        for name, values in state["params"].items():
            arr = np.asarray(values, dtype=np.float64).reshape(state["shapes"][name])
            self.params[name].data = arr

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        state = self.state_dict()
        if extra:
            state["extra"] = extra
        path.write_text(json.dumps(state))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "NavHintModel":
        state = json.loads(Path(path).read_text())
        _check_version(state)
        model = cls(Vocab(state["vocab"]), ModelConfig(**state["config"]))
        model.load_state_dict(state)
        return model


def _check_version(state: dict) -> None:
    version = str(state.get("checkpoint_version", ""))
    if version.split(".")[0] != CHECKPOINT_VERSION.split(".")[0]:
        raise SchemaError(f"unsupported checkpoint version {version!r}")


# ---------------------------------------------------------------------------
# losses


def nav_loss(teacher_log_probs: Sequence[Tensor], teacher_actions: Sequence[int],
             sample_log_probs: Sequence[Tensor] = (), sample_actions: Sequence[int] = (),
             advantages: Sequence[float] = (), lam: float = 0.2) -> Tensor:
    """Imitation cross-entropy plus ``lam`` times a fixed-advantage REINFORCE term."""
    if not teacher_log_probs and not sample_log_probs:
        raise UndefinedInputError("empty rollout")
    terms = [-lp[a] for lp, a in zip(teacher_log_probs, teacher_actions)]
    if lam:
        terms += [lp[a] * (-lam * float(adv)) for lp, a, adv in zip(sample_log_probs, sample_actions, advantages)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def total_loss(hint: Tensor | float, nav: Tensor | float) -> Tensor:
    """Unweighted sum; any non-finite input aborts training."""
    for part in (hint, nav):
        value = part.data if isinstance(part, Tensor) else np.asarray(part)
        if not np.all(np.isfinite(value)):
            raise TrainingAbort(f"non-finite loss component {float(value)}")
    return T.add(hint, nav)


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_group: dict[str, float]
    checked: int
    tolerance: float
    h: float
    worst: tuple[str, tuple[int, ...], float, float] | None = None  # name, index, analytic, numeric

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def summary(self) -> str:
        lines = [f"checked {self.checked} scalars, h={self.h:g}, tolerance {self.tolerance:g}"]
        lines += [f"  {g:<12} max rel error {e:.3e}" for g, e in sorted(self.per_group.items())]
        lines.append(f"max rel error {self.max_rel_error:.3e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


# central differences at h=1e-5 on a loss of a few hundred carry ~1e-8 rounding
# noise, so components below this floor are effectively compared absolutely
GRADCHECK_FLOOR = 1e-4


def relative_error(analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(params: dict[str, Tensor], loss_fn, groups: dict[str, Sequence[str]] | None = None,
               samples: int = 500, h: float = 1e-5, tolerance: float = 1e-4, seed: int = 0,
               floor: float = GRADCHECK_FLOOR) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences on sampled scalars.

    Args:
        params: named leaf tensors.
        loss_fn: zero-argument callable returning a scalar Tensor; must be a
            deterministic function of ``params``.
        groups: group name -> parameter names. Samples are spread evenly over
            groups so every group is covered. Defaults to one group per tensor.
        samples: total number of scalars to probe.

    Returns:
        A :class:`GradCheckReport`; ``passed`` is False above ``tolerance``.
    """
    groups = groups or {name: (name,) for name in params}
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()}
    rng = np.random.default_rng(seed)
    names_by_group = {g: [n for n in names if n in params] for g, names in groups.items()}
    names_by_group = {g: ns for g, ns in names_by_group.items() if ns}
    per_group = {g: 0.0 for g in names_by_group}
    worst = None
    worst_err = -1.0
    checked = 0
    group_list = sorted(names_by_group)
    for k in range(samples):
        g = group_list[k % len(group_list)]
        names = names_by_group[g]
        sizes = np.array([params[n].data.size for n in names], dtype=float)
        name = names[int(rng.choice(len(names), p=sizes / sizes.sum()))]
        t = params[name]
        idx = tuple(int(rng.integers(s)) for s in t.shape)
        old = t.data[idx]
        with T.no_grad():
            t.data[idx] = old + h
            up = float(loss_fn().data)
            t.data[idx] = old - h
            down = float(loss_fn().data)
        t.data[idx] = old
        numeric = (up - down) / (2 * h)
        a = float(analytic[name][idx])
        err = relative_error(a, numeric, floor)
        per_group[g] = max(per_group[g], err)
        checked += 1
        if err > worst_err:
            worst_err, worst = err, (name, idx, a, numeric)
    return GradCheckReport(max(per_group.values()), per_group, checked, tolerance, h, worst)
