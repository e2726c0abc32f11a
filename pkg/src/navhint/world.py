"""Procedural navigation worlds and instruction-aligned episodes.

A world is an undirected metric graph of viewpoints. Every directed edge
``u -> v`` carries a candidate view: what the agent sees when standing at
``u`` and looking toward ``v`` (a heading, a quantized elevation and a list of
attributed objects). Objects are attached to destination nodes, so views from
different nodes toward the same node share their local objects.

Episodes are shortest paths with a synthetic instruction built from per-hop
templates, so sub-instruction alignment is exact by construction.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, UnknownNodeError
from .lexicon import Lexicon, load_lexicon, pluralize
from .seeding import rng_for

SCHEMA_VERSION = "1.0"
ELEVATIONS = (-math.pi / 6, 0.0, math.pi / 6)


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class VisualObject:
    head_noun: str
    attributes: tuple[str, ...] = ()

    @property
    def phrase(self) -> str:
        return " ".join(self.attributes + (self.head_noun,))

    def to_dict(self) -> dict:
        return {"head_noun": self.head_noun, "attributes": list(self.attributes), "phrase": self.phrase}

    @classmethod
    def from_dict(cls, d: dict) -> "VisualObject":
        obj = cls(d["head_noun"], tuple(d["attributes"]))
        if "phrase" in d and d["phrase"] != obj.phrase:
            raise ValueError(f"phrase mismatch: {d['phrase']!r} != {obj.phrase!r}")
        return obj


@dataclass(frozen=True)
class CandidateView:
    """A navigable neighbor seen from the current node.

    ``heading`` is relative to the agent's heading: views stored in a World
    are relative to the world frame (heading 0 = +x), and
    :func:`relative_views` re-expresses them for a given arrival heading.
    Positive headings turn left (counter-clockwise).
    """

    neighbor: int
    heading: float
    elevation: float
    objects: tuple[VisualObject, ...]

    def to_dict(self) -> dict:
        return {
            "neighbor": self.neighbor,
            "heading": self.heading,
            "elevation": self.elevation,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateView":
        return cls(int(d["neighbor"]), float(d["heading"]), float(d["elevation"]),
                   tuple(VisualObject.from_dict(o) for o in d["objects"]))


@dataclass
class World:
    world_id: str
    nodes: dict[int, tuple[float, float, float]]
    edges: list[tuple[int, int, float]]
    views: dict[int, tuple[CandidateView, ...]]
    object_lexicon_seed: int

    @cached_property
    def adjacency(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {n: {} for n in self.nodes}
        for a, b, length in self.edges:
            adj[a][b] = length
            adj[b][a] = length
        return adj

    @cached_property
    def _dijkstra_cache(self) -> dict[int, tuple[dict[int, float], dict[int, int]]]:
        return {}

    def check_node(self, node: int) -> None:
        if node not in self.nodes:
            raise UnknownNodeError(f"node {node!r} not in world {self.world_id}")

    def dijkstra(self, source: int) -> tuple[dict[int, float], dict[int, int]]:
        """Distances and predecessor map from ``source`` (cached per source)."""
        self.check_node(source)
        cache = self._dijkstra_cache
        if source not in cache:
            cache[source] = _dijkstra(self.adjacency, source)
        return cache[source]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "world_id": self.world_id,
            "nodes": {str(n): list(p) for n, p in sorted(self.nodes.items())},
            "edges": [[a, b, length] for a, b, length in self.edges],
            "views": {str(n): [v.to_dict() for v in vs] for n, vs in sorted(self.views.items())},
            "object_lexicon_seed": self.object_lexicon_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        _check_schema(d)
        return cls(
            world_id=d["world_id"],
            nodes={int(n): tuple(p) for n, p in d["nodes"].items()},
            edges=[(int(a), int(b), float(length)) for a, b, length in d["edges"]],
            views={int(n): tuple(CandidateView.from_dict(v) for v in vs) for n, vs in d["views"].items()},
            object_lexicon_seed=int(d["object_lexicon_seed"]),
        )


@dataclass(frozen=True)
class SubInstructionSpan:
    start_token: int
    end_token: int
    hop_index: int


@dataclass(frozen=True)
class Episode:
    episode_id: str
    world_id: str
    path: tuple[int, ...]
    instruction: tuple[str, ...]
    spans: tuple[SubInstructionSpan, ...]

    @property
    def goal(self) -> int:
        return self.path[-1]

    def sub_instruction(self, hop: int) -> tuple[str, ...]:
        span = self.spans[hop]
        return self.instruction[span.start_token:span.end_token]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "episode_id": self.episode_id,
            "world_id": self.world_id,
            "path": list(self.path),
            "instruction": list(self.instruction),
            "spans": [[s.start_token, s.end_token, s.hop_index] for s in self.spans],
            "goal": self.goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        _check_schema(d)
        ep = cls(
            episode_id=d["episode_id"],
            world_id=d["world_id"],
            path=tuple(int(n) for n in d["path"]),
            instruction=tuple(d["instruction"]),
            spans=tuple(SubInstructionSpan(int(a), int(b), int(h)) for a, b, h in d["spans"]),
        )
        if "goal" in d and int(d["goal"]) != ep.goal:
            raise ValueError(f"episode {ep.episode_id}: goal is not the last path node")
        # spans must tile the instruction, one per hop, in order
        bounds = [0] + [s.end_token for s in ep.spans]
        if (len(ep.spans) != len(ep.path) - 1 or bounds[-1] != len(ep.instruction)
                or any(s.hop_index != i or s.start_token != bounds[i] or s.end_token <= s.start_token
                       for i, s in enumerate(ep.spans))):
            raise ValueError(f"episode {ep.episode_id}: spans do not tile the instruction one per hop")
        return ep


@dataclass(frozen=True)
class WorldConfig:
    node_count: int = 24
    box: tuple[float, float] = (12.0, 9.5)
    z_sigma: float = 0.25
    z_limit: float = 1.5
    k_neighbors: int = 3
    min_spacing: float = 1.0
    max_degree: int = 8
    local_objects: tuple[int, int] = (2, 4)
    common_per_view: tuple[int, int] = (1, 2)
    scene_noun_prob: float = 0.2
    attribute_prob: float = 0.6
    plural_prob: float = 0.4
    max_tries: int = 50


@dataclass(frozen=True)
class EpisodeConfig:
    min_hops: int = 3
    max_hops: int = 6
    # target frequencies of the hop's landmark situation; the realized
    # category is recomputed from the views by the hint builder
    category_weights: dict = field(default_factory=lambda: {
        "invisible": 0.32, "multiple": 0.30, "none": 0.16, "target": 0.12, "missing": 0.10,
    })
    second_landmark_prob: float = 0.2
    attribute_mention_prob: float = 0.5
    max_tries: int = 200


# ---------------------------------------------------------------------------
# graph utilities


def _dijkstra(adj: dict[int, dict[int, float]], source: int) -> tuple[dict[int, float], dict[int, int]]:
    dist = {source: 0.0}
    pred: dict[int, int] = {}
    heap = [(0.0, source)]
    done: set[int] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in sorted(adj[u].items()):
            nd = d + w
            if nd < dist.get(v, math.inf) - 1e-12:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def shortest_path_distance(world: World, a: int, b: int) -> float:
    world.check_node(b)
    dist, _ = world.dijkstra(a)
    return dist[b]


def shortest_path(world: World, a: int, b: int) -> list[int]:
    world.check_node(b)
    _, pred = world.dijkstra(a)
    path = [b]
    while path[-1] != a:
        path.append(pred[path[-1]])
    return path[::-1]


def path_length(world: World, path: Sequence[int]) -> float:
    adj = world.adjacency
    return float(sum(adj[u][v] for u, v in zip(path, path[1:])))


def candidate_views(world: World, node: int) -> list[CandidateView]:
    """Views at ``node`` ordered by neighbor id, headings in the world frame."""
    world.check_node(node)
    return list(world.views[node])


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


def relative_views(world: World, node: int, heading: float) -> list[CandidateView]:
    """Views at ``node`` with headings relative to the agent's ``heading``."""
    return [
        CandidateView(v.neighbor, wrap_angle(v.heading - heading), v.elevation, v.objects)
        for v in candidate_views(world, node)
    ]


def move_heading(world: World, a: int, b: int) -> float:
    (xa, ya, _), (xb, yb, _) = world.nodes[a], world.nodes[b]
    return math.atan2(yb - ya, xb - xa)


# ---------------------------------------------------------------------------
# world generation


def _place_nodes(rng: np.random.Generator, cfg: WorldConfig) -> np.ndarray:
    pts: list[np.ndarray] = []
    budget = cfg.node_count * 200
    while len(pts) < cfg.node_count:
        budget -= 1
        if budget < 0:
            raise GenerationError(
                f"could not place {cfg.node_count} nodes with spacing {cfg.min_spacing} in box {cfg.box}")
        x = rng.uniform(0, cfg.box[0])
        y = rng.uniform(0, cfg.box[1])
        z = float(np.clip(rng.normal(0, cfg.z_sigma), -cfg.z_limit, cfg.z_limit))
        p = np.array([x, y, z])
        if all(np.hypot(*(p[:2] - q[:2])) >= cfg.min_spacing for q in pts):
            pts.append(p)
    return np.round(np.array(pts), 3)


def _build_edges(pts: np.ndarray, cfg: WorldConfig) -> set[tuple[int, int]]:
    n = len(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        order = [j for j in np.argsort(dist[i], kind="stable") if j != i]
        for j in order[: cfg.k_neighbors]:
            edges.add((min(i, j), max(i, j)))
    # Prim's minimum spanning tree guarantees connectivity
    in_tree = {0}
    tree: set[tuple[int, int]] = set()
    while len(in_tree) < n:
        best = None
        for i in sorted(in_tree):
            for j in range(n):
                if j not in in_tree and (best is None or dist[i, j] < best[0]):
                    best = (dist[i, j], i, j)
        _, i, j = best
        in_tree.add(j)
        tree.add((min(i, j), max(i, j)))
    edges |= tree
    # cap the degree by dropping the longest non-tree edges
    deg = {i: 0 for i in range(n)}
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    for a, b in sorted(edges - tree, key=lambda e: -dist[e]):
        if (deg[a] > cfg.max_degree or deg[b] > cfg.max_degree) and deg[a] > 2 and deg[b] > 2:
            edges.discard((a, b))
            deg[a] -= 1
            deg[b] -= 1
    return {(int(a), int(b)) for a, b in edges}


def quantize_elevation(dz: float, dxy: float) -> float:
    angle = math.atan2(dz, dxy)
    return min(ELEVATIONS, key=lambda e: abs(e - angle))


def _make_object(rng: np.random.Generator, noun: str, lex: Lexicon, cfg: WorldConfig) -> VisualObject:
    attrs: tuple[str, ...] = ()
    if rng.random() < cfg.attribute_prob:
        pool = sorted(lex.attributes)
        k = 1 if rng.random() < 0.7 else 2
        attrs = tuple(str(a) for a in rng.choice(pool, size=k, replace=False))
    surface = pluralize(noun) if noun in lex.pluralizable and rng.random() < cfg.plural_prob else noun
    return VisualObject(surface, attrs)


def generate_world(seed: int, cfg: WorldConfig = WorldConfig(), world_id: str | None = None,
                   lexicon: Lexicon | None = None) -> World:
    if cfg.node_count < 4:
        raise ValueError("node_count must be >= 4")
    lex = lexicon or load_lexicon()
    if not lex.nouns:
        raise ValueError("object lexicon is empty")
    world_id = world_id if world_id is not None else f"w{seed:04d}"

    for attempt in range(cfg.max_tries):
        rng = rng_for(seed, f"world/geometry/{attempt}")
        pts = _place_nodes(rng, cfg)
        edges = _build_edges(pts, cfg)
        degrees = [sum(1 for e in edges if i in e) for i in range(cfg.node_count)]
        if min(degrees) >= 2 and max(degrees) <= cfg.max_degree and _connected(cfg.node_count, edges):
            break
    else:
        raise GenerationError(f"no valid graph for seed {seed} after {cfg.max_tries} attempts")

    nodes = {i: tuple(float(c) for c in pts[i]) for i in range(cfg.node_count)}
    edge_list = sorted(
        (a, b, float(np.round(np.linalg.norm(pts[a] - pts[b]), 6))) for a, b in edges)

    object_seed = int(rng_for(seed, "world/object-seed").integers(2**31))
    orng = np.random.default_rng(object_seed)
    object_pool = list(lex.object_nouns)
    local: dict[int, list[VisualObject]] = {}
    scene: dict[int, str] = {}
    for i in range(cfg.node_count):
        k = int(orng.integers(cfg.local_objects[0], cfg.local_objects[1] + 1))
        nouns = orng.choice(object_pool, size=k, replace=False)
        local[i] = [_make_object(orng, str(nn), lex, cfg) for nn in nouns]
        scene[i] = str(orng.choice(list(lex.scene_nouns)))

    adj: dict[int, list[int]] = {i: [] for i in nodes}
    for a, b, _ in edge_list:
        adj[a].append(b)
        adj[b].append(a)
    views: dict[int, tuple[CandidateView, ...]] = {}
    for u in sorted(nodes):
        vs = []
        for v in sorted(adj[u]):
            objs = list(local[v])
            if orng.random() < cfg.scene_noun_prob:
                objs.append(VisualObject(scene[v]))
            n_common = int(orng.integers(cfg.common_per_view[0], cfg.common_per_view[1] + 1))
            for noun in orng.choice(list(lex.common_nouns), size=n_common, replace=False):
                objs.append(_make_object(orng, str(noun), lex, cfg))
            objs = _dedupe_nouns(objs, lex)
            order = orng.permutation(len(objs))
            objs = [objs[j] for j in order]
            (xu, yu, zu), (xv, yv, zv) = nodes[u], nodes[v]
            dxy = math.hypot(xv - xu, yv - yu)
            vs.append(CandidateView(
                neighbor=v,
                heading=wrap_angle(math.atan2(yv - yu, xv - xu)),
                elevation=quantize_elevation(zv - zu, dxy),
                objects=tuple(objs),
            ))
        views[u] = tuple(vs)
    return World(world_id, nodes, edge_list, views, object_seed)


def _dedupe_nouns(objs: Iterable[VisualObject], lex: Lexicon) -> list[VisualObject]:
    seen: set[str] = set()
    out = []
    for o in objs:
        key = lex.singularize(o.head_noun)
        if key not in seen:
            seen.add(key)
            out.append(o)
    return out


def _connected(n: int, edges: set[tuple[int, int]]) -> bool:
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {0}
    stack = [0]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


# ---------------------------------------------------------------------------
# episode generation

DIRECTION_PHRASES = {
    "straight": (("go", "straight"), ("walk", "forward"), ("continue", "straight")),
    "veer_left": (("veer", "left"), ("bear", "left")),
    "veer_right": (("veer", "right"), ("bear", "right")),
    "left": (("turn", "left"), ("make", "a", "left", "turn")),
    "right": (("turn", "right"), ("make", "a", "right", "turn")),
    "around": (("turn", "around"),),
}
ELEVATION_PHRASES = {1: ("and", "go", "upstairs"), -1: ("and", "go", "downstairs")}
LANDMARK_VERBS = (("walk", "towards", "the"), ("go", "past", "the"), ("walk", "to", "the"))
SCENE_VERB = ("walk", "into", "the")


def direction_bin(alpha: float) -> str:
    deg = math.degrees(alpha)
    a = abs(deg)
    if a <= 30:
        return "straight"
    if a > 140:
        return "around"
    side = "left" if deg > 0 else "right"
    return ("veer_" + side) if a <= 80 else side


def elevation_sign(beta: float) -> int:
    return 0 if abs(beta) < 1e-9 else (1 if beta > 0 else -1)


def generate_episode(world: World, seed: int, cfg: EpisodeConfig = EpisodeConfig(),
                     episode_id: str | None = None, lexicon: Lexicon | None = None) -> Episode:
    lex = lexicon or load_lexicon()
    episode_id = episode_id if episode_id is not None else f"{world.world_id}-e{seed}"
    rng = rng_for(seed, f"episode/{world.world_id}/{episode_id}")
    node_ids = sorted(world.nodes)
    for _ in range(cfg.max_tries):
        start = int(rng.choice(node_ids))
        dist, pred = world.dijkstra(start)
        goals = []
        for g in node_ids:
            if g == start:
                continue
            hops = len(shortest_path(world, start, g)) - 1
            if cfg.min_hops <= hops <= cfg.max_hops:
                goals.append(g)
        if goals:
            goal = int(rng.choice(goals))
            break
    else:
        raise GenerationError(
            f"no start/goal pair with {cfg.min_hops}..{cfg.max_hops} hops in world {world.world_id}")
    path = shortest_path(world, start, goal)

    tokens: list[str] = []
    spans: list[SubInstructionSpan] = []
    heading = move_heading(world, path[0], path[1])
    for hop, (u, v) in enumerate(zip(path, path[1:])):
        views = relative_views(world, u, heading)
        target = next(i for i, view in enumerate(views) if view.neighbor == v)
        words = _hop_words(rng, views, target, lex, cfg)
        if hop == len(path) - 2:
            words += ["and", "stop"]
        spans.append(SubInstructionSpan(len(tokens), len(tokens) + len(words), hop))
        tokens.extend(words)
        heading = move_heading(world, u, v)
    return Episode(episode_id, world.world_id, tuple(path), tuple(tokens), tuple(spans))


def _nouns_in(view: CandidateView, lex: Lexicon) -> set[str]:
    return {lex.singularize(o.head_noun) for o in view.objects}


def _hop_words(rng: np.random.Generator, views: list[CandidateView], target: int,
               lex: Lexicon, cfg: EpisodeConfig) -> list[str]:
    tview = views[target]
    tbin, telev = direction_bin(tview.heading), elevation_sign(tview.elevation)
    confusers = [i for i, vw in enumerate(views) if i != target
                 and direction_bin(vw.heading) == tbin and elevation_sign(vw.elevation) == telev]
    others = [vw for i, vw in enumerate(views) if i != target]
    target_nouns = _nouns_in(tview, lex)
    other_nouns = set().union(*(_nouns_in(vw, lex) for vw in others)) if others else set()
    visible = target_nouns | other_nouns

    kinds = list(cfg.category_weights)
    probs = np.array([cfg.category_weights[k] for k in kinds], dtype=float)
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]

    chosen: list[str] = []
    used: set[str] = set()

    def pick_visible(candidates: set[str], where: CandidateView | None) -> None:
        nouns = sorted(candidates - used)
        if not nouns:
            return
        noun = str(rng.choice(nouns))
        used.add(noun)
        if where is None:
            where = next(vw for vw in others if noun in _nouns_in(vw, lex))
        obj = next(o for o in where.objects if lex.singularize(o.head_noun) == noun)
        if obj.attributes and rng.random() < cfg.attribute_mention_prob:
            chosen.append(obj.phrase)
        else:
            chosen.append(obj.head_noun)

    def pick_invisible() -> None:
        pool = lex.scene_nouns if rng.random() < 0.6 else lex.object_nouns + lex.scene_nouns
        nouns = sorted(set(pool) - visible - used)
        if not nouns:
            return
        noun = str(rng.choice(nouns))
        used.add(noun)
        if noun in lex.object_nouns and rng.random() < 0.3:
            chosen.append(f"{rng.choice(sorted(lex.attributes))} {noun}")
        else:
            chosen.append(noun)

    def pick(kind: str) -> None:
        if kind == "target":
            pick_visible(target_nouns - other_nouns, tview)
        elif kind == "multiple":
            pick_visible(target_nouns & other_nouns, tview)
        elif kind == "missing":
            pick_visible(other_nouns - target_nouns, None)
        elif kind == "invisible":
            pick_invisible()

    pick(kind)
    if kind != "none" and not chosen:
        pick("invisible")
    if chosen and rng.random() < cfg.second_landmark_prob:
        second = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
        pick(second)
    if confusers:
        # keep the hop solvable: name something the look-alike views lack
        confuser_nouns = set().union(*(_nouns_in(views[i], lex) for i in confusers))
        if not any(lex.singularize(c.split()[-1]) in target_nouns - confuser_nouns for c in chosen):
            pick_visible(target_nouns - confuser_nouns, tview)

    direction = list(DIRECTION_PHRASES[tbin][int(rng.integers(len(DIRECTION_PHRASES[tbin])))])
    words = direction + list(ELEVATION_PHRASES.get(telev, ()))
    if not chosen:
        return words
    verb = LANDMARK_VERBS[int(rng.integers(len(LANDMARK_VERBS)))]
    if chosen[0] in lex.scene_nouns and rng.random() < 0.7:
        verb = SCENE_VERB
    words += ["and", *verb, *chosen[0].split()]
    for extra in chosen[1:]:
        words += ["near", "the", *extra.split()]
    return words


# ---------------------------------------------------------------------------
# files


def _check_schema(d: dict) -> None:
    from .errors import SchemaError

    version = str(d.get("schema_version", SCHEMA_VERSION))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaError(f"unsupported schema version {version}")


def dumps_world(world: World) -> str:
    return json.dumps(world.to_dict(), indent=1) + "\n"


def save_world(world: World, directory: str | Path) -> Path:
    path = Path(directory) / f"{world.world_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_world(world))
    return path


def load_world(path: str | Path) -> World:
    return World.from_dict(json.loads(Path(path).read_text()))


def load_worlds(directory: str | Path) -> dict[str, World]:
    worlds = {}
    for path in sorted(Path(directory).glob("*.json")):
        if path.name.endswith("manifest.json"):
            continue
        w = load_world(path)
        worlds[w.world_id] = w
    return worlds


def dumps_episodes(episodes: Iterable[Episode]) -> str:
    return "".join(json.dumps(e.to_dict()) + "\n" for e in episodes)


def save_episodes(episodes: Iterable[Episode], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_episodes(episodes))
    return path


def load_episodes(path: str | Path) -> list[Episode]:
    with open(path) as fh:
        return [Episode.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# corpora

SPLITS = ("train", "seen", "unseen")


@dataclass(frozen=True)
class CorpusConfig:
    train_worlds: int = 30
    unseen_worlds: int = 8
    train_episodes: int = 2000
    seen_episodes: int = 200
    unseen_episodes: int = 400


def generate_worlds(seed: int, count: int, cfg: WorldConfig = WorldConfig()) -> list[World]:
    from .seeding import derive_seed

    return [generate_world(derive_seed(seed, f"world/{i}") % 2**31, cfg, world_id=f"w{i:03d}")
            for i in range(count)]


def generate_splits(worlds: Sequence[World], seed: int, corpus: CorpusConfig = CorpusConfig(),
                    cfg: EpisodeConfig = EpisodeConfig()) -> dict[str, list[Episode]]:
    """Episodes for the train / seen / unseen splits.

    The last ``corpus.unseen_worlds`` worlds (by id) are held out; seen
    episodes reuse training worlds but never repeat a training path.
    """
    from .seeding import derive_seed

    ordered = sorted(worlds, key=lambda w: w.world_id)
    if len(ordered) <= corpus.unseen_worlds:
        raise ValueError("need more worlds than the number held out")
    train_w = ordered[: len(ordered) - corpus.unseen_worlds]
    unseen_w = ordered[len(ordered) - corpus.unseen_worlds:]
    out: dict[str, list[Episode]] = {}
    taken: set[tuple[str, tuple[int, ...]]] = set()
    for split, pool, count in (("train", train_w, corpus.train_episodes),
                               ("seen", train_w, corpus.seen_episodes),
                               ("unseen", unseen_w, corpus.unseen_episodes)):
        eps = []
        for k in range(count):
            world = pool[k % len(pool)]
            for retry in range(50):
                ep_seed = derive_seed(seed, f"{split}/{k}/{retry}") % 2**31
                ep = generate_episode(world, ep_seed, cfg, episode_id=f"{split}-{k:05d}")
                key = (world.world_id, ep.path)
                if split != "seen" or key not in taken:
                    break
            taken.add(key)
            eps.append(ep)
        out[split] = eps
    return out
