import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mempolicy.cli import main as cli_main
from mempolicy.env import Episode, generate_demos
from mempolicy.errors import ConfigError, DataError, NumericError
from mempolicy.harness import (
    AdaptiveEnsemble,
    ExpertAgent,
    FrameQueue,
    TrainConfig,
    Trainer,
    build_batches,
    evaluate,
    load_checkpoint,
    load_config,
    save_config,
    train,
)
from mempolicy.harness.ablation import ABLATION_COLUMNS, directions, parse_axes, run_ablation
from mempolicy.harness.plots import plot_metrics, smooth
from mempolicy.memory import MemoryModule, StreamRetriever

TINY = dict(
    batch_size=8, d_model=16, n_p=2, d_p=8, d_c=8, n_heads=2, heads_perceptual=2,
    n_blocks=1, val_every=0, precision="float64", repeats=2,
)


def tiny(task="seq_push_buttons", **kw):
    return TrainConfig(task=task, **{**TINY, **kw})


def fake_episodes(lengths, task="markov_reach"):
    eps = []
    for i, n in enumerate(lengths):
        eps.append(Episode(i, task, np.arange(n), np.zeros((n, 4)), np.zeros(n, int), np.zeros((n, 2))))
    return eps


# -- batching ----------------------------------------------------------------


def test_single_episode_single_batch():
    (batch,) = list(build_batches(fake_episodes([32]), 32))
    assert [(f.episode, f.t) for f in batch.frames] == [(0, t) for t in range(32)]
    assert batch.boundaries() == [0]


def test_spill_into_next_episode():
    b1, b2 = list(build_batches(fake_episodes([20, 20]), 32, n_batches=2))
    assert [(f.episode, f.t) for f in b1.frames] == [(0, t) for t in range(20)] + [(1, t) for t in range(12)]
    assert (b2.frames[0].episode, b2.frames[0].t) == (1, 12)
    assert b1.boundaries() == [0, 20]
    assert b1.segments() == [(0, 0, 19), (1, 0, 11)]


def test_queue_rejects_empty_episode():
    with pytest.raises(DataError):
        FrameQueue([3, 0], 4)
    with pytest.raises(DataError):
        list(build_batches([], 4))


def test_queue_is_pure_and_shuffles_per_epoch():
    q = FrameQueue([5, 7, 3], 4, shuffle_seed=3)
    assert q.batch_at(9) == FrameQueue([5, 7, 3], 4, shuffle_seed=3).batch_at(9)
    seen = [q.frame_at(i) for i in range(q.epoch_frames)]
    assert sorted((f.episode, f.t) for f in seen) == sorted((e, t) for e, n in enumerate([5, 7, 3]) for t in range(n))


def test_bank_reset_at_episode_boundary():
    demos = generate_demos("seq_push_buttons", 4, 0)
    trainer = Trainer(tiny(batch_size=len(demos[0]) + 3), demos)
    batch = trainer.queue.batch_at(0)
    snaps = trainer.bank_snapshots(batch)
    for f, bank in zip(batch.frames, snaps):
        assert bank.owner == demos[f.episode].episode_id
        assert len(bank.cognitive) == min(f.t, bank.capacity)
    cut = batch.boundaries()[1]
    assert snaps[cut].is_empty() and not snaps[cut - 1].is_empty()


# -- training ----------------------------------------------------------------


def test_memoryless_config_never_queries_bank(monkeypatch):
    cfg = tiny(use_perceptual=False, use_cognitive=False, total_steps=2)
    demos = generate_demos(cfg.task, 3, 0)

    def boom(*a, **k):
        raise AssertionError("bank queried")

    trainer = Trainer(cfg, demos)
    monkeypatch.setattr(StreamRetriever, "__call__", boom)
    monkeypatch.setattr(MemoryModule, "retrieve", boom)
    trainer.train_step()
    snaps = trainer.bank_snapshots(trainer.queue.batch_at(0))
    assert all(b.is_empty() for b in snaps)
    report = evaluate(trainer.policy, cfg.task, trials=2)
    assert report.trials == 2


def test_metrics_csv_deterministic(tmp_path):
    cfg = tiny(total_steps=6, val_every=3, val_trials=2)
    demos = generate_demos(cfg.task, 5, 0)
    a = train(cfg, demos, tmp_path / "a")
    b = train(cfg, demos, tmp_path / "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    rows = list(csv.reader(a.metrics_path.open()))
    assert rows[0] == ["schema_version", "step", "loss", "grad_norm", "val_score"]
    assert len(rows) == 7 and rows[3][4] != "" and rows[1][4] == ""


def test_resume_reproduces_next_loss(tmp_path):
    cfg = tiny(total_steps=4)
    demos = generate_demos(cfg.task, 5, 1)
    res = train(cfg, demos, tmp_path)
    ref = Trainer(cfg, demos, res.final.policy)
    ref.load_optimizer(res.final.optimizer, res.final.step)
    ck = load_checkpoint(tmp_path / "last.npz")
    back = Trainer(cfg, demos, ck.policy)
    back.load_optimizer(ck.optimizer, ck.step)
    for _ in range(2):
        la, _ = ref.train_step()
        lb, _ = back.train_step()
        assert abs(la - lb) < 1e-6
    longer = train(cfg.with_(total_steps=6), demos, tmp_path / "r", resume=tmp_path / "last.npz")
    assert len(longer.losses) == 2 and abs(longer.losses[1] - la) < 1e-6


def test_resume_rejects_other_config(tmp_path):
    cfg = tiny(total_steps=1)
    demos = generate_demos(cfg.task, 2, 0)
    train(cfg, demos, tmp_path)
    with pytest.raises(ConfigError):
        train(cfg.with_(learning_rate=0.5), demos, resume=tmp_path / "last.npz")


def test_nan_loss_aborts_with_last_good(tmp_path, monkeypatch):
    cfg = tiny(total_steps=5)
    demos = generate_demos(cfg.task, 3, 0)
    real = Trainer.batch_loss

    def poisoned(self, step):
        loss = real(self, step)
        return loss * float("nan") if step == 2 else loss

    monkeypatch.setattr(Trainer, "batch_loss", poisoned)
    with pytest.raises(NumericError):
        train(cfg, demos, tmp_path)
    ck = load_checkpoint(tmp_path / "last_good.npz")
    assert ck.step == 2
    assert all(np.isfinite(v).all() for v in ck.policy.state_dict().values())


def test_wrong_task_demos_rejected():
    with pytest.raises(ConfigError):
        Trainer(tiny(task="markov_reach"), generate_demos("seq_push_buttons", 1, 0))


@pytest.mark.slow
def test_markov_reach_smoke():
    cfg = TrainConfig(task="markov_reach", total_steps=500, val_every=0, use_perceptual=False,
                      use_cognitive=False, n_demos=100)
    res = train(cfg, generate_demos(cfg.task, cfg.n_demos, 0))
    s = smooth(np.array(res.losses), 50)
    assert s[-1] < 0.5 * s[49]


# -- checkpoints and config --------------------------------------------------


def test_checkpoint_roundtrip_and_corruption(tmp_path):
    cfg = tiny(total_steps=1)
    res = train(cfg, generate_demos(cfg.task, 2, 0), tmp_path)
    ck = load_checkpoint(tmp_path / "last.npz")
    assert ck.policy.params_hash() == res.final.policy.params_hash()
    assert np.array_equal(ck.policy.normalizer.std, res.final.policy.normalizer.std)
    assert np.array_equal(ck.policy.obs_normalizer.mean, res.final.policy.obs_normalizer.mean)
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(bad)


def test_config_yaml_roundtrip(tmp_path):
    cfg = tiny(fusion="add", consolidation="fifo")
    save_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    (tmp_path / "u.yaml").write_text("task: markov_reach\nwidth: 3\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "u.yaml")
    with pytest.raises(ConfigError):
        tiny(fusion="concat")


# -- evaluation --------------------------------------------------------------


@pytest.mark.parametrize("task", ["seq_push_buttons", "pick_place_order", "guess_where", "markov_reach"])
def test_expert_agent_scores_one(task):
    report = evaluate(ExpertAgent(task), task, trials=50)
    assert report.success_rate == 1.0 and report.mean_score == pytest.approx(1.0)


def test_expert_agent_with_ensemble():
    report = evaluate(ExpertAgent("seq_push_buttons"), "seq_push_buttons", trials=10, ensemble="adaptive")
    assert report.success_rate == 1.0


def test_ensemble_uniform_at_zero_alpha():
    ens = AdaptiveEnsemble(0.0)
    for v in (1.0, 2.0, 6.0):
        ens.add(np.full((4, 2), v), 0)
    assert np.allclose(ens.action(1), 3.0)


def test_ensemble_single_prediction():
    for alpha in (0.0, 0.1, 5.0):
        ens = AdaptiveEnsemble(alpha)
        chunk = np.arange(8.0).reshape(4, 2)
        ens.add(chunk, 10)
        assert np.array_equal(ens.action(12), chunk[2])


def test_ensemble_prefers_recent():
    ens = AdaptiveEnsemble(1.0)
    ens.add(np.zeros((3, 1)), 0)
    ens.add(np.ones((3, 1)), 1)
    assert ens.action(1)[0] > 0.5
    with pytest.raises(ConfigError):
        ens.action(9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.lists(st.integers(0, 40), min_size=1, max_size=16))
def test_ensemble_weights_sum_to_one(alpha, ages):
    w = AdaptiveEnsemble(alpha).weights(ages)
    assert abs(w.sum() - 1.0) < 1e-12 and np.all(w >= 0)


def test_eval_leaves_parameters_and_checks_task():
    cfg = tiny(total_steps=0)
    res = train(cfg, generate_demos(cfg.task, 2, 0))
    report = evaluate(res.final, trials=3)
    assert report.params_hash_before == report.params_hash_after
    assert len(report.scores) == 3 and 0.0 <= report.success_rate <= 1.0
    with pytest.raises(ConfigError):
        evaluate(res.final, "markov_reach", trials=1)
    with pytest.raises(ConfigError):
        evaluate(res.final, trials=0)


def test_eval_is_deterministic():
    cfg = tiny(total_steps=2)
    pol = train(cfg, generate_demos(cfg.task, 2, 0)).final
    a = evaluate(pol, trials=3, ensemble="adaptive")
    b = evaluate(pol, trials=3, ensemble="adaptive")
    assert a.scores == b.scores and a.lengths == b.lengths


# -- ablation ----------------------------------------------------------------


def test_ablation_fusion_rows(tmp_path):
    base = tiny(total_steps=2, n_demos=3)
    rows = run_ablation(base, "fusion", trials=2, out_dir=tmp_path)
    assert [(r.axis, r.variant) for r in rows] == [("fusion", "gate"), ("fusion", "add")]
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].split(",") == ABLATION_COLUMNS and len(lines) == 3
    again = run_ablation(base, ["fusion"], trials=2)
    assert [r.as_list() for r in again] == [r.as_list() for r in rows]
    found = directions(rows)
    assert len(found) == 1 and found[0]["blocking"]
    assert (tmp_path / "directions.csv").exists()


def test_ablation_shares_base_run(tmp_path):
    base = tiny(total_steps=1, n_demos=2)
    rows = run_ablation(base, "fusion,consolidation", trials=1, out_dir=tmp_path)
    assert len(rows) == 4
    # gate and merge are both the base config: three distinct trainings
    assert len(list((tmp_path / "runs").iterdir())) == 3
    assert rows[0].mean_score == rows[2].mean_score


def test_ablation_axes_validation():
    assert parse_axes("") == ["type", "length", "retrieval", "fusion", "consolidation"]
    with pytest.raises(ConfigError):
        parse_axes(["colour"])


# -- CLI and plots -----------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    demos, run = tmp_path / "demos", tmp_path / "run"
    assert cli_main(["gen-demos", "--task", "seq_push_buttons", "--n", "3", "--seed", "0", "--out", str(demos)]) == 0
    save_config(tiny(total_steps=3, val_every=3, val_trials=2), tmp_path / "cfg.yaml")
    assert cli_main(["train", "--config", str(tmp_path / "cfg.yaml"), "--demos", str(demos),
                     "--out", str(run), "--quiet"]) == 0
    assert cli_main(["eval", "--checkpoint", str(run / "best.npz"), "--trials", "2",
                     "--json", str(tmp_path / "r.json")]) == 0
    assert cli_main(["plot-metrics", "--csv", str(run / "metrics.csv"), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "loss.png").stat().st_size > 0
    assert (tmp_path / "plots" / "val_score.png").exists()
    assert "mean score" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    (tmp_path / "bad.yaml").write_text("fusion: concat\n")
    assert cli_main(["train", "--config", str(tmp_path / "bad.yaml"), "--demos", str(tmp_path),
                     "--out", str(tmp_path / "o")]) == 2
    save_config(tiny(), tmp_path / "ok.yaml")
    assert cli_main(["train", "--config", str(tmp_path / "ok.yaml"), "--demos", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o")]) == 3
    assert cli_main(["eval", "--checkpoint", str(tmp_path / "missing.npz")]) == 3
    assert cli_main(["ablate", "--config", str(tmp_path / "ok.yaml"), "--axes", "colour",
                     "--out", str(tmp_path / "a")]) == 2


def test_plot_requires_metrics_header(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        plot_metrics(tmp_path / "m.csv", tmp_path)
