import pytest

from navhint.hints import build_hint_dataset
from navhint.world import WorldConfig, generate_episode, generate_world, generate_worlds


@pytest.fixture(scope="session")
def world():
    return generate_world(7)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(3, WorldConfig(node_count=10))


@pytest.fixture(scope="session")
def worlds():
    return {w.world_id: w for w in generate_worlds(11, 6)}


@pytest.fixture(scope="session")
def episodes(worlds):
    out = []
    for i, w in enumerate(sorted(worlds.values(), key=lambda w: w.world_id)):
        out += [generate_episode(w, 100 * i + k, episode_id=f"{w.world_id}-{k:03d}") for k in range(25)]
    return out


@pytest.fixture(scope="session")
def hint_records(episodes, worlds):
    return build_hint_dataset(episodes, worlds)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
