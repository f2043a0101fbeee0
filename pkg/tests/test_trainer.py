import itertools
import json

import numpy as np
import pytest

import depthdehaze.trainer as trainer_mod
from depthdehaze.autodiff import Tensor
from depthdehaze.errors import InvalidArgumentError, NonFiniteLossError
from depthdehaze.layers import tree_flatten
from depthdehaze.losses import LossReport
from depthdehaze.trainer import TrainConfig, Trainer, train
from helpers import flat_param_snapshot, tiny_config, trees_equal_bitwise


def make_trainer(tiny_dataset, **over):
    return Trainer(tiny_config(**over), tiny_dataset)


# -- config ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(eta_e=0.0).validate()
    with pytest.raises(InvalidArgumentError):
        TrainConfig(crop_size=20).validate()
    with pytest.raises(InvalidArgumentError):
        TrainConfig(alternation="2").validate()
    with pytest.raises(InvalidArgumentError):
        TrainConfig(alternation="0:1").validate()
    TrainConfig(alternation="2:1").validate()


def test_config_json_round_trip():
    cfg = tiny_config(use_dp=False, alternation="2:1")
    back = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


# -- frozen-partner invariants -----------------------------------------------------

def test_step_depth_never_touches_dehaze_params(tiny_dataset):
    tr = make_trainer(tiny_dataset)
    before = flat_param_snapshot(tr.state.dehaze)
    batch = tr.sample_batch()
    tr.step_depth(batch, 1e-3, LossReport())
    assert trees_equal_bitwise(tr.state.dehaze, before)


def test_step_dehaze_never_touches_depth_params(tiny_dataset):
    tr = make_trainer(tiny_dataset)
    before = flat_param_snapshot(tr.state.depth)
    batch = tr.sample_batch()
    tr.step_dehaze(batch, 1e-3, LossReport())
    assert trees_equal_bitwise(tr.state.depth, before)


def test_zero_learning_rate_freezes_depth_params(tiny_dataset):
    tr = make_trainer(tiny_dataset)
    before = flat_param_snapshot(tr.state.depth)
    tr.step_depth(tr.sample_batch(), 0.0, LossReport())
    assert trees_equal_bitwise(tr.state.depth, before)


def test_steps_do_update_their_own_side(tiny_dataset):
    tr = make_trainer(tiny_dataset)
    d0 = flat_param_snapshot(tr.state.depth)
    h0 = flat_param_snapshot(tr.state.dehaze)
    batch = tr.sample_batch()
    tr.step_depth(batch, 1e-3, LossReport())
    tr.step_dehaze(batch, 1e-3, LossReport())
    assert not trees_equal_bitwise(tr.state.depth, d0)
    assert not trees_equal_bitwise(tr.state.dehaze, h0)


# -- ablation semantics ---------------------------------------------------------------

def test_step_depth_requires_use_de(tiny_dataset):
    tr = make_trainer(tiny_dataset, use_de=False)
    with pytest.raises(InvalidArgumentError):
        tr.step_depth(tr.sample_batch(), 1e-3, LossReport())


def test_dp_off_loss_equals_unweighted_variant(tiny_dataset):
    tr = make_trainer(tiny_dataset, use_dp=False, seed=3)
    batch = tr.sample_batch()
    # independent recomputation of the unweighted image L1 this step will see
    hazy = Tensor(batch["hazy"])
    m_tilde = tr.depth_net.forward_batch(tr.state.depth, hazy)
    u_star, _ = tr.dehaze_net.forward_batch(tr.state.dehaze, hazy, m_tilde)
    expected = float(np.abs(u_star.data - batch["clear"]).mean())
    rep = LossReport()
    tr.step_dehaze(batch, 1e-3, rep)
    assert rep.dehaze_weighted_l1 == pytest.approx(expected, rel=1e-6)
    assert rep.dp_dehaze_aux == 0.0


def test_de_off_runs_on_zero_depth_and_stays_finite(tiny_dataset):
    tr = make_trainer(tiny_dataset, use_de=False)
    rep = LossReport()
    tr.step_dehaze(tr.sample_batch(), 1e-3, rep)
    rep.finalize()
    assert rep.is_finite()
    assert rep.depth_weighted == 0.0 and rep.depth_hazy == 0.0


def test_ablation_lattice_smoke(micro_dataset):
    """Every combination of the five flags trains 50 steps without error."""
    flags = ("use_legm", "use_mfm", "use_msaam", "use_de", "use_dp")
    for values in itertools.product((True, False), repeat=5):
        over = dict(zip(flags, values))
        cfg = tiny_config(total_steps=50, crop_size=16, holdout=1,
                          widths=(4, 8, 8), depth_widths=(4, 6, 8),
                          depth_growth=2, window=4, **over)
        state, log = Trainer(cfg, micro_dataset).train()
        assert state.step == 50
        assert all(LossReport(**{k: v for k, v in line.items()
                                 if k in LossReport.__dataclass_fields__}).is_finite()
                   for line in log if "lr_e" in line)


# -- loop behavior ----------------------------------------------------------------------

def test_zero_total_steps_returns_initial_state(tiny_dataset):
    tr = make_trainer(tiny_dataset, total_steps=0)
    before = flat_param_snapshot(tr.state.dehaze)
    state, log = tr.train()
    assert state.step == 0 and log == []
    assert trees_equal_bitwise(tr.state.dehaze, before)


def test_training_is_deterministic(tiny_dataset):
    logs = []
    for _ in range(2):
        _, log = train(tiny_config(total_steps=3, eval_every=2), tiny_dataset)
        logs.append(json.dumps(log, sort_keys=True))
    assert logs[0] == logs[1]


def test_log_contains_schedule_and_eval(tiny_dataset):
    _, log = train(tiny_config(total_steps=4, eval_every=2), tiny_dataset)
    assert log[0]["step"] == 0 and "eval" in log[0]
    steps = [l["step"] for l in log if "lr_e" in l]
    assert steps == [1, 2, 3, 4]
    from depthdehaze.optim import cosine_lr
    for line in log:
        if "lr_e" in line:
            assert line["lr_e"] == pytest.approx(
                cosine_lr(line["step"] - 1, 4, 1e-3, 1e-6), rel=1e-12)
    assert "eval" in log[-1]


def test_alternation_two_to_one(tiny_dataset):
    tr = make_trainer(tiny_dataset, alternation="2:1", total_steps=1)
    state, log = tr.train()
    assert state.opt_depth_side.t == 2
    assert state.opt_dehaze_side.t == 1


def test_nonfinite_loss_aborts_with_diagnostics(tiny_dataset, monkeypatch):
    def poisoned(*a, **k):
        return Tensor(np.float32(np.nan)), {"dehaze_weighted_l1": float("nan"),
                                            "contrastive_ratio": 0.0}
    monkeypatch.setattr(trainer_mod, "dehaze_loss", poisoned)
    tr = make_trainer(tiny_dataset)
    with pytest.raises(NonFiniteLossError) as exc:
        tr.train()
    assert exc.value.step == 0
    assert len(exc.value.scene_ids) == tr.cfg.batch_size


# -- checkpointing --------------------------------------------------------------------------

def test_checkpoint_roundtrip_resumes_bitwise(tiny_dataset, tmp_path):
    cfg = tiny_config(total_steps=6, checkpoint_every=3, eval_every=0)
    tr = Trainer(cfg, tiny_dataset)
    state, _ = tr.train(out_dir=tmp_path / "run")
    uninterrupted = flat_param_snapshot(state.dehaze) | {
        "depth." + k: v for k, v in flat_param_snapshot(state.depth).items()}

    resumed = Trainer.from_checkpoint(tmp_path / "run" / "checkpoint_000003.ckpt",
                                      tiny_dataset)
    assert resumed.state.step == 3
    state2, log2 = resumed.train()
    assert [l["step"] for l in log2 if "lr_e" in l] == [4, 5, 6]
    continued = flat_param_snapshot(state2.dehaze) | {
        "depth." + k: v for k, v in flat_param_snapshot(state2.depth).items()}
    assert set(continued) == set(uninterrupted)
    for k in continued:
        assert np.array_equal(continued[k], uninterrupted[k]), k
    # optimizer state rides along bitwise too
    assert state2.opt_dehaze_side.t == state.opt_dehaze_side.t
    for k in state.opt_dehaze_side.m:
        assert np.array_equal(state2.opt_dehaze_side.m[k], state.opt_dehaze_side.m[k])


def test_checkpoint_preserves_config(tiny_dataset, tmp_path):
    cfg = tiny_config(total_steps=1, use_dp=False)
    tr = Trainer(cfg, tiny_dataset)
    tr.train(out_dir=tmp_path)
    resumed = Trainer.from_checkpoint(tmp_path / "checkpoint_000001.ckpt", tiny_dataset)
    assert resumed.cfg == cfg


# -- batches --------------------------------------------------------------------------------

def test_sample_batch_shapes_and_crop(tiny_dataset):
    tr = make_trainer(tiny_dataset, batch_size=3, crop_size=24)
    b = tr.sample_batch()
    assert b["hazy"].shape == (3, 3, 24, 24)
    assert b["clear"].shape == (3, 3, 24, 24)
    assert b["depth"].shape == (3, 1, 24, 24)
    assert b["hazy"].dtype == np.float32
    assert len(b["scene_ids"]) == 3


def test_holdout_split_excluded_from_sampling(tiny_dataset):
    tr = make_trainer(tiny_dataset, holdout=4)
    held_ids = set(tr.data["scene_ids"][tr.n_train:])
    for _ in range(20):
        assert not (set(tr.sample_batch()["scene_ids"]) & held_ids)
