"""Wayfinding and trajectory-fidelity metrics, plus corpus BLEU.

Node-to-node distances are graph shortest-path distances in the world.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import UndefinedInputError, UnknownNodeError
from .world import World, path_length, shortest_path_distance

SUCCESS_THRESHOLD = 3.0


@dataclass(frozen=True)
class PathPair:
    predicted: tuple[int, ...]
    reference: tuple[int, ...]
    world: World
    d_th: float = SUCCESS_THRESHOLD
    # a rollout cut off by the step limit counts as a failure wherever it ends
    stopped: bool = True

    def __post_init__(self):
        if not self.predicted or not self.reference:
            raise UndefinedInputError("paths must be non-empty")
        for n in (*self.predicted, *self.reference):
            self.world.check_node(n)

    def dist(self, a: int, b: int) -> float:
        return shortest_path_distance(self.world, a, b)


@dataclass(frozen=True)
class MetricReport:
    ne: float
    sr: float
    spl: float
    cls: float
    ndtw: float
    sdtw: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def navigation_error(pair: PathPair) -> float:
    return pair.dist(pair.predicted[-1], pair.reference[-1])


def success(pair: PathPair) -> int:
    return int(pair.stopped and navigation_error(pair) <= pair.d_th)


def spl(pair: PathPair) -> float:
    s = success(pair)
    if not s:
        return 0.0
    best = pair.dist(pair.reference[0], pair.reference[-1])
    taken = path_length(pair.world, pair.predicted)
    if max(taken, best) == 0.0:
        return 1.0
    return best / max(taken, best)


def dtw_costs(d: np.ndarray) -> np.ndarray:
    """Dynamic time warping cost for a batch of distance matrices.

    Args:
        d: array of shape (N, n, m); ``d[k, i, j]`` is the distance between
            predicted node i and reference node j of pair k.

    Returns:
        Array of N alignment costs.
    """
    count, n, m = d.shape
    cost = np.full((count, n + 1, m + 1), np.inf)
    cost[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = np.minimum(np.minimum(cost[:, i - 1, j], cost[:, i, j - 1]), cost[:, i - 1, j - 1])
            cost[:, i, j] = d[:, i - 1, j - 1] + best
    return cost[:, n, m]


def dtw(pair: PathPair) -> float:
    """Dynamic time warping cost between predicted and reference paths."""
    d = np.array([[pair.dist(p, r) for r in pair.reference] for p in pair.predicted])
    return float(dtw_costs(d[None])[0])


def distance_matrix(world: World) -> tuple[np.ndarray, dict[int, int]]:
    """All-pairs shortest distances and the node -> row index map."""
    order = sorted(world.nodes)
    index = {n: i for i, n in enumerate(order)}
    mat = np.array([[shortest_path_distance(world, a, b) for b in order] for a in order])
    return mat, index


def ndtw_batch(world: World, predicted: Sequence[Sequence[int]], reference: Sequence[Sequence[int]],
               d_th: float = SUCCESS_THRESHOLD) -> np.ndarray:
    """nDTW for many pairs at once; equals :func:`ndtw` pair by pair.

    All predicted paths must share one length and all reference paths another.
    """
    mat, index = distance_matrix(world)
    lookup = np.full(max(index) + 1, -1)
    lookup[list(index)] = list(index.values())
    p, r = np.asarray(predicted), np.asarray(reference)
    if p.ndim != 2 or r.ndim != 2 or len(p) != len(r):
        raise UndefinedInputError("predicted and reference must be equal-count 2-D batches")
    for batch in (p, r):
        if batch.min() < 0 or batch.max() >= len(lookup) or (lookup[batch] < 0).any():
            raise UnknownNodeError("batch references nodes outside the world")
    p, r = lookup[p], lookup[r]
    d = mat[p[:, :, None], r[:, None, :]]
    return np.exp(-dtw_costs(d) / (r.shape[1] * d_th))


def ndtw(pair: PathPair) -> float:
    return float(np.exp(-dtw(pair) / (len(pair.reference) * pair.d_th)))


def sdtw(pair: PathPair) -> float:
    return success(pair) * ndtw(pair)


def cls(pair: PathPair) -> float:
    """Coverage weighted by length score."""
    p, r = pair.predicted, pair.reference
    coverage = float(np.mean([math.exp(-min(pair.dist(ri, pj) for pj in p) / pair.d_th) for ri in r]))
    ref_len = path_length(pair.world, r)
    pred_len = path_length(pair.world, p)
    expected = coverage * ref_len
    denom = expected + abs(pred_len - expected)
    length_score = 1.0 if denom == 0.0 else expected / denom
    return coverage * length_score


def evaluate_pairs(pairs: Iterable[PathPair]) -> MetricReport:
    rows = [(navigation_error(p), success(p), spl(p), cls(p), ndtw(p), sdtw(p)) for p in pairs]
    if not rows:
        raise UndefinedInputError("no episodes to aggregate")
    # math.fsum keeps the mean independent of aggregation order
    means = [math.fsum(col) / len(rows) for col in zip(*rows)]
    return MetricReport(*means, count=len(rows))


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(n: int, candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-n with uniform weights, brevity penalty and no smoothing."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise UndefinedInputError("empty corpus")
    matches = [0] * n
    totals = [0] * n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 1):
            c, r = _ngrams(cand, k), _ngrams(ref, k)
            matches[k - 1] += sum(min(cnt, r[g]) for g, cnt in c.items())
            totals[k - 1] += max(len(cand) - k + 1, 0)
    if cand_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_precision)
