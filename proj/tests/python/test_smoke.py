import math
from pathlib import Path

import pytest

import cdan

ROOT = Path(__file__).resolve().parents[2]
SUITE = ROOT / "data" / "suite.manifest"
SMOKE = ROOT / "tests" / "data" / "smoke.manifest"
DEFAULT_CFG = ROOT / "configs" / "default.cfg"


def small_config(steps=1024, ablation="de+sc"):
    cfg = cdan.RunConfig.load(DEFAULT_CFG)
    cfg.suite = SMOKE
    cfg.total_steps = steps
    cfg.ablation = ablation
    cfg.set("eval_every", "0")
    cfg.set("final_eval_episodes", "2")
    return cfg


def test_suite_distances():
    env = cdan.MazeEnv(SUITE)
    assert env.task_count == 7
    assert [env.start_distance(i) for i in range(7)] == [8, 8, 16, 8, 12, 16, 16]
    assert env.context_dim == 8


def test_step_rewards_telescope():
    env = cdan.MazeEnv(SUITE)
    rng = cdan.Rng(3)
    state, context, obs = env.reset(1, rng)
    assert len(obs) == env.observation_dim
    assert context[1] == 1.0
    d0 = env.shortest_distance(1, state.position)
    total, n = 0.0, 0
    result = None
    while result is None or not result.done:
        result = env.step(1, state, cdan.Action(1.0, 0.3), n)
        total += result.reward
        state = result.next_state
        n += 1
    dn = env.shortest_distance(1, state.position)
    assert abs(total + n * env.params.eta + dn - d0) < 1e-9


def test_env_check_passes():
    report = cdan.env_check(cdan.MazeEnv(SUITE), steps=5000)
    assert report["ok"], report["failures"]


def test_nsd_matches_hand_computation():
    rollouts = [
        {"task": 0, "start_distance": 8.0, "final_distance": 2.0},
        {"task": 0, "start_distance": 8.0, "final_distance": 4.0},
        {"task": 1, "start_distance": 16.0, "final_distance": 16.0},
        {"task": 1, "start_distance": 16.0, "final_distance": 8.0},
    ]
    assert math.isclose(cdan.nsd(rollouts, 2, 2), (5.0 / 8.0 + 4.0 / 16.0) / 2.0)
    with pytest.raises(cdan.UsageError):
        cdan.nsd(rollouts, 3, 2)


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError):
        cdan.RunConfig.parse("cdan-config 1\nsuite = x\nnot_a_key = 1\n")
    cfg = cdan.RunConfig.parse("cdan-config 1\nsuite = /x/y.manifest\nseed = 4\n")
    assert cdan.RunConfig.parse(cfg.format()).format() == cfg.format()


def test_train_evaluate_and_checkpoint(tmp_path):
    trainer = cdan.Trainer(small_config(), tmp_path)
    stats = trainer.iterate()
    assert stats["step"] == 512
    trainer.run()
    assert trainer.finished and trainer.global_step == 1024
    ckpt = tmp_path / "final.ckpt"
    assert cdan.checkpoint_resave_identical(ckpt)
    report = cdan.evaluate(ckpt, SMOKE, episodes=3, seed=1)
    assert [t["name"] for t in report["tasks"]] == ["line", "corner_1"]
    assert len(report["rollouts"]) == 6
    assert 0.0 <= report["tasks"][0]["success_rate"] <= 1.0
    with pytest.raises(ValueError, match="context dim"):
        cdan.evaluate(ckpt, SUITE, episodes=1)


def test_same_seed_same_bytes():
    runs = []
    for _ in range(2):
        t = cdan.Trainer(small_config(1024, "de"))
        t.run()
        runs.append((t.checkpoint_bytes(), t.log_text))
    assert runs[0] == runs[1]
