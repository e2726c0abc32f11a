"""Walk through one episode: world, instruction, per-hop hints and path metrics.

Run with ``python3 demos/hints_walkthrough.py``. Prints a short narrative to stdout.
"""

from collections import Counter

from navhint.hints import build_hint_dataset, parse_hint, render_hint
from navhint.metrics import PathPair, ndtw, spl, success
from navhint.world import generate_episode, generate_world, generate_worlds, shortest_path


def main():
    world = generate_world(7)
    print(f"world {world.world_id}: {len(world.nodes)} nodes, {len(world.edges)} edges")

    ep = generate_episode(world, 0)
    print(f"\nepisode {ep.episode_id}, path {list(ep.path)}")
    print("instruction:", " ".join(ep.instruction))

    records = build_hint_dataset([ep], {world.world_id: world})
    for rec in records:
        text = render_hint(rec)
        assert parse_hint(text).sub_instruction == rec.sub_instruction
        print(f"\nhop {rec.step_index} [{rec.step_category.value}]")
        print("  ", text)

    # a detour scores lower on SPL and nDTW but still succeeds
    goal = ep.path[-1]
    detour = list(ep.path[:2]) + shortest_path(world, ep.path[1], ep.path[0])[1:] + shortest_path(world, ep.path[0], goal)[1:]
    for name, path in (("teacher", ep.path), ("detour", detour)):
        pair = PathPair(tuple(path), ep.path, world)
        print(f"\n{name:8s} SR={success(pair):.0f} SPL={spl(pair):.3f} nDTW={ndtw(pair):.3f}")

    # category frequencies on a larger corpus
    worlds = {w.world_id: w for w in generate_worlds(1, 6)}
    eps = [generate_episode(w, k) for w in worlds.values() for k in range(40)]
    counts = Counter(r.step_category.value for r in build_hint_dataset(eps, worlds))
    print("\nambiguity categories:", dict(counts.most_common()))


if __name__ == "__main__":
    main()
