import dataclasses
import math

import numpy as np
import pytest

from navhint import tensor as T
from navhint.errors import TrainingAbort
from navhint.metrics import PathPair, evaluate_pairs
from navhint.seeding import rng_for
from navhint.train import (
    STOP,
    Adam,
    NavData,
    TrainConfig,
    build_model,
    clip_grad_norm,
    corpus_vocab,
    episode_loss,
    evaluate_split,
    load_rollouts,
    loss_csv,
    lr_at,
    probe_loss_fn,
    rollout,
    save_rollouts,
    teacher_hint_rows,
    train,
    truncate_episode,
)
from navhint.world import shortest_path

SMALL = TrainConfig(d=16, prefix_len=4, epochs=2, max_hint_tokens=40)


@pytest.fixture(scope="module")
def data(worlds, episodes, hint_records):
    hints = {}
    for r in hint_records:
        hints.setdefault(r.episode_id, []).append(r)
    return NavData(worlds, episodes, hints)


@pytest.fixture(scope="module")
def model(data):
    return build_model(corpus_vocab(data), SMALL)


def test_config_validation():
    assert TrainConfig(hint_parts=("sub", "distinctive", "sub")).hint_parts == ("distinctive", "sub")
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(hint_parts=("colour",))
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"epoch": 3})


def test_config_toml_resolves_paths(tmp_path):
    (tmp_path / "c.toml").write_text('worlds = "w"\nhint_parts = ["sub"]\nlam = 0.0\n')
    cfg = TrainConfig.from_toml(tmp_path / "c.toml")
    assert cfg.worlds == str(tmp_path / "w")
    assert cfg.hint_parts == ("sub",) and cfg.lam == 0.0


def test_gold_hints_respect_parts(data):
    ep = data.episodes[0]
    full = data.gold_hints(ep, ("ambiguity", "distinctive", "sub"))
    sub = data.gold_hints(ep, ("sub",))
    assert len(full) == len(ep.path) - 1
    assert all(len(s) <= len(f) for s, f in zip(sub, full))
    assert data.gold_hints(ep, ()) is None


def test_teacher_rollout_is_perfect(model, data):
    pairs = []
    with T.no_grad():
        for ep in data.episodes:
            rec = rollout(model, ep, data.worlds[ep.world_id], "teacher").record
            assert rec.path == list(ep.path)
            assert rec.steps[-1].action == STOP and not rec.truncated
            pairs.append(PathPair(tuple(rec.path), ep.path, data.worlds[ep.world_id]))
    m = evaluate_pairs(pairs)
    assert (m.sr, m.spl, m.ndtw, m.sdtw, m.ne) == (1.0, 1.0, 1.0, 1.0, 0.0)


def test_teacher_index_follows_shortest_path(model, data):
    ep = data.episodes[3]
    world = data.worlds[ep.world_id]
    with T.no_grad():
        rec = rollout(model, ep, world, "teacher").record
    for st in rec.steps[:-1]:
        assert st.candidates[st.teacher] == shortest_path(world, st.node, ep.goal)[1]
    assert rec.steps[-1].teacher == STOP


def test_step_limit_forces_stop(model, data):
    ep = data.episodes[0]
    never_stop = [0] * 50
    with T.no_grad():
        rec = rollout(model, ep, data.worlds[ep.world_id], "greedy", actions=never_stop, slack=1).record
    assert rec.truncated
    assert len(rec.steps) == len(ep.path) - 1 + 1 + 1
    assert rec.steps[-1].action == STOP and rec.steps[-1].reward < 0


def test_gold_hints_only_on_path(model, data):
    ep = next(e for e in data.episodes if len(e.path) >= 4)
    world = data.worlds[ep.world_id]
    gold = data.gold_hints(ep, ("sub",))
    with T.no_grad():
        first = rollout(model, ep, world, "teacher").record.steps[0]
        off = next(i for i, n in enumerate(first.candidates) if n != ep.path[1])
        rec = rollout(model, ep, world, "greedy", gold_hints=gold, actions=[off] + [0] * 20, slack=1).record
    assert rec.steps[0].gold_hint == gold[0]
    assert all(st.gold_hint is None for st in rec.steps[1:])


def test_rollout_mode_errors(model, data):
    ep = data.episodes[0]
    with pytest.raises(ValueError):
        rollout(model, ep, data.worlds[ep.world_id], "beam")
    with pytest.raises(ValueError):
        rollout(model, ep, data.worlds[ep.world_id], "sample")


def test_adam_minimises_quadratic():
    x = T.Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        x.grad = None
        ((x - 1.0) * (x - 1.0)).sum().backward()
        opt.step()
    np.testing.assert_allclose(x.data, [1.0, 1.0], atol=1e-2)


def test_clip_grad_norm():
    a = T.Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([3.0, 4.0])
    assert clip_grad_norm([a], 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(a.grad) == pytest.approx(1.0)
    a.grad = np.array([0.3, 0.4])
    clip_grad_norm([a], 1.0)
    np.testing.assert_allclose(a.grad, [0.3, 0.4])


def test_lr_schedule():
    cfg = TrainConfig(epochs=5, lr=1e-3, lr_final=1e-4)
    assert lr_at(cfg, 0) == pytest.approx(1e-3)
    assert lr_at(cfg, 4) == pytest.approx(1e-4)
    assert lr_at(cfg, 2) == pytest.approx(5.5e-4)
    rates = [lr_at(cfg, e) for e in range(5)]
    assert rates == sorted(rates, reverse=True)


def test_episode_loss_parts(model, data):
    ep = data.episodes[0]
    world = data.worlds[ep.world_id]
    gold = data.gold_hints(ep, SMALL.hint_parts)
    loss, l_hint, l_nav, sample = episode_loss(model, ep, world, SMALL, gold, rng_for(0, "t"))
    assert l_hint > 0 and math.isfinite(l_nav)
    assert float(loss.data) == pytest.approx(l_hint + l_nav)
    assert sample is not None
    model.zero_grad()
    _, l_hint0, _, sample0 = episode_loss(model, ep, world, dataclasses.replace(SMALL, lam=0.0, hint_parts=()),
                                          None, None)
    assert l_hint0 == 0.0 and sample0 is None


def test_probe_loss_is_deterministic(model, data):
    ep = data.episodes[1]
    fn = probe_loss_fn(model, ep, data.worlds[ep.world_id], SMALL, data.gold_hints(ep, SMALL.hint_parts))
    assert float(fn().data) == float(fn().data)
    assert len(truncate_episode(ep, 2).path) == 3


def test_train_deterministic_and_learns(tmp_path, data):
    cfg = dataclasses.replace(SMALL, episode_cap=40, epochs=3, lr=3e-3)
    small = NavData(data.worlds, data.episodes[:40], data.hints)
    m1, trace1 = train(cfg, small, out_dir=tmp_path / "a")
    m2, trace2 = train(cfg, small, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    assert (tmp_path / "a" / "loss.csv").read_text() == loss_csv(trace1)
    first = np.mean([r["loss"] for r in trace1 if r["epoch"] == 0])
    last = np.mean([r["loss"] for r in trace1 if r["epoch"] == 2])
    assert last < first


def test_train_abort_keeps_last_good(tmp_path, data, monkeypatch):
    import navhint.train as tr

    calls = {"n": 0}
    real = tr.train_epoch

    def flaky(model, opt, *a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            model.params["state_b"].data = model.params["state_b"].data * np.nan
            raise TrainingAbort("nan")
        return real(model, opt, *a, **kw)

    monkeypatch.setattr(tr, "train_epoch", flaky)
    cfg = dataclasses.replace(SMALL, episode_cap=5, epochs=3)
    with pytest.raises(TrainingAbort):
        train(cfg, NavData(data.worlds, data.episodes[:5], data.hints), out_dir=tmp_path)
    saved = tr.NavHintModel.load(tmp_path / "checkpoint_last_good.json")
    assert np.all(np.isfinite(saved.params["state_b"].data))


def test_evaluate_split_and_rollout_io(tmp_path, model, data):
    small = NavData(data.worlds, data.episodes[:10], data.hints)
    report, rollouts, rows = evaluate_split(model, small, SMALL)
    again = evaluate_split(model, small, SMALL)
    assert report == again[0] and rows == again[2]
    assert report.count == 10
    assert all(r["generated"] is not None for r in rows)
    path = save_rollouts(rollouts, tmp_path / "r.jsonl")
    assert load_rollouts(path) == rollouts


def test_teacher_hint_rows_are_gold(data):
    small = NavData(data.worlds, data.episodes[:10], data.hints)
    rollouts, rows = teacher_hint_rows(small)
    assert len(rows) == sum(len(ep.path) - 1 for ep in small.episodes)
    assert all(r["generated"] == r["gold"] for r in rows)
    assert all(r["selected"] == r["teacher"] for r in rows)
