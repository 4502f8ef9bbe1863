"""Network construction, shape contracts, temporal schedules, gradients,
and checkpoint persistence."""
import numpy as np
import pytest

from motionnet import nn
from motionnet.bev import GridSpec
from motionnet.model import MotionNet, Prediction, StpnConfig

TINY = StpnConfig(
    in_channels=3,
    frames=3,
    channels=(2, 3, 4, 5),
    lift_channels=2,
    head_channels=2,
    temporal_kernel=2,
    categories=3,
    n_steps=2,
)


def tiny_input(rng, b=1, h=8, w=8, frames=3, ch=3):
    return rng.random((b, frames, ch, h, w))


# -- temporal schedule ------------------------------------------------------


def test_middle_fusion_lengths():
    cfg = StpnConfig()
    assert cfg.fusion == "middle"
    assert cfg.temporal_levels == (1, 2)
    assert cfg.block_input_lengths() == (5, 3, 1, 1)


def test_late_fusion_lengths():
    cfg = StpnConfig(fusion="late")
    assert cfg.temporal_levels == (3, 4)
    assert cfg.block_input_lengths() == (5, 5, 5, 3)


def test_early_fusion_collapses_before_pyramid():
    cfg = StpnConfig(fusion="early")
    assert cfg.temporal_levels == ()
    assert cfg.n_pre_blocks == 2
    # two k_t=3 pre-blocks: 5 -> 3 -> 1, then constant through the pyramid
    assert cfg.block_input_lengths() == (1, 1, 1, 1)


def test_short_stacks_degrade_gracefully():
    # with 2 input frames a k_t=3 temporal conv can never fire
    cfg = StpnConfig(frames=2)
    assert cfg.block_input_lengths() == (2, 2, 2, 2)
    cfg = StpnConfig(frames=7)
    assert cfg.block_input_lengths() == (7, 5, 3, 3)


def test_forward_realizes_schedule():
    rng = np.random.default_rng(0)
    for fusion, want in [("middle", (3, 2, 1, 1)), ("late", (3, 3, 3, 2)), ("early", (1, 1, 1, 1))]:
        cfg = StpnConfig(
            in_channels=3, frames=3, channels=(2, 2, 2, 2), lift_channels=2,
            head_channels=2, temporal_kernel=2, categories=3, n_steps=2, fusion=fusion,
        )
        model = MotionNet(cfg, seed=1)
        model.forward(tiny_input(rng))
        assert model.last_block_lengths == want, fusion


def test_rejects_unknown_fusion():
    with pytest.raises(ValueError, match="fusion"):
        StpnConfig(fusion="sideways")


# -- forward shapes ---------------------------------------------------------


def test_forward_shapes_and_sample_layouts():
    rng = np.random.default_rng(1)
    model = MotionNet(TINY, seed=0)
    pred = model.forward(tiny_input(rng, b=2, h=16, w=8))
    assert pred.class_logits.shape == (2, 3, 16, 8)
    assert pred.motion.shape == (2, 2, 2, 16, 8)
    assert pred.static_logit.shape == (2, 16, 8)
    view = pred.sample(1)
    assert view.class_logits.shape == (16, 8, 3)
    assert view.rel_motion.shape == (2, 16, 8, 2)
    assert view.static_logit.shape == (16, 8)
    np.testing.assert_array_equal(view.class_logits[:, :, 2], pred.class_logits.data[1, 2])
    np.testing.assert_array_equal(view.rel_motion[1, :, :, 0], pred.motion.data[1, 1, 0])


def test_state_head_optional():
    cfg = StpnConfig(
        in_channels=3, frames=3, channels=(2, 3, 4, 5), lift_channels=2,
        head_channels=2, temporal_kernel=2, categories=3, n_steps=2, state_head=False,
    )
    model = MotionNet(cfg, seed=0)
    assert not any(n.startswith("head_state") for n in model.params)
    pred = model.forward(tiny_input(np.random.default_rng(2)))
    assert pred.static_logit is None
    assert pred.sample().static_logit is None


def test_fresh_heads_predict_nothing():
    """Zero-initialized final layers: zero offsets and a uniform class
    posterior, so an untrained network starts from the neutral prediction."""
    model = MotionNet(TINY, seed=3)
    pred = model.forward(tiny_input(np.random.default_rng(3)))
    np.testing.assert_array_equal(pred.motion.data, 0.0)
    np.testing.assert_array_equal(pred.static_logit.data, 0.0)
    spread = pred.class_logits.data.max(axis=1) - pred.class_logits.data.min(axis=1)
    np.testing.assert_array_equal(spread, 0.0)


def test_absolute_displacement_is_prefix_sum():
    model = MotionNet(TINY, seed=4)
    pred = model.forward(tiny_input(np.random.default_rng(4)))
    rel = np.random.default_rng(5).normal(size=pred.motion.shape)
    pred.motion = nn.Tensor(rel)
    np.testing.assert_allclose(pred.absolute_displacement().data, np.cumsum(rel, axis=1), rtol=0, atol=0)
    pred.config = StpnConfig(
        in_channels=3, frames=3, channels=(2, 3, 4, 5), lift_channels=2,
        head_channels=2, temporal_kernel=2, categories=3, n_steps=2, relative_offsets=False,
    )
    np.testing.assert_array_equal(pred.absolute_displacement().data, rel)


def test_input_validation():
    rng = np.random.default_rng(6)
    model = MotionNet(TINY, seed=0)
    with pytest.raises(nn.ShapeError, match="frames"):
        model.forward(rng.random((1, 4, 3, 8, 8)))
    with pytest.raises(nn.ShapeError, match="channels"):
        model.forward(rng.random((1, 3, 2, 8, 8)))
    with pytest.raises(nn.ShapeError, match="divisible by 8"):
        model.forward(rng.random((1, 3, 3, 12, 8)))
    with pytest.raises(nn.ShapeError, match="ndim"):
        model.forward(rng.random((3, 3, 8, 8)))


def test_params_independent_of_input_size():
    model = MotionNet(TINY, seed=0)
    names = set(model.params)
    rng = np.random.default_rng(7)
    a = model.forward(tiny_input(rng, h=8, w=8))
    b = model.forward(tiny_input(rng, h=16, w=24))
    assert set(model.params) == names
    assert a.class_logits.shape[2:] == (8, 8)
    assert b.class_logits.shape[2:] == (16, 24)


def test_parameter_partition():
    model = MotionNet(TINY, seed=0)
    shared = {p.name for p in model.shared_parameters()}
    heads = {n for n in model.params if n.startswith("head_")}
    assert shared.isdisjoint(heads)
    assert shared | heads == set(model.params)
    assert {p.name for p in model.head_parameters("head_motion")} == {
        n for n in model.params if n.startswith("head_motion")
    }


# -- numerics ---------------------------------------------------------------


def test_eval_batch_equivariance():
    """With frozen normalization statistics, batch elements must not
    interact: predicting two scenes together equals predicting them alone."""
    rng = np.random.default_rng(8)
    model = MotionNet(TINY, seed=9)
    x = tiny_input(rng, b=3)
    joint = model.forward(x, training=False)
    for i in range(3):
        solo = model.forward(x[i : i + 1], training=False)
        np.testing.assert_allclose(solo.class_logits.data[0], joint.class_logits.data[i], atol=1e-12)


def test_training_stats_update_flag():
    rng = np.random.default_rng(10)
    model = MotionNet(TINY, seed=11)
    key = "stc1.conv1.bn.mean"
    before = model.buffers[key].copy()
    model.forward(tiny_input(rng), training=True, update_stats=False)
    np.testing.assert_array_equal(model.buffers[key], before)
    model.forward(tiny_input(rng), training=True)
    assert np.any(model.buffers[key] != before)


def test_forward_deterministic_across_instances():
    rng = np.random.default_rng(12)
    x = tiny_input(rng)
    a = MotionNet(TINY, seed=13).forward(x)
    b = MotionNet(TINY, seed=13).forward(x)
    np.testing.assert_array_equal(a.class_logits.data, b.class_logits.data)
    np.testing.assert_array_equal(a.motion.data, b.motion.data)


def test_end_to_end_gradcheck():
    rng = np.random.default_rng(14)
    model = MotionNet(TINY, seed=15)
    # zero-initialized head outputs would zero every trunk gradient, so give
    # the final layers generic values before differencing
    for name in ("head_cls.out", "head_motion.out", "head_state.out"):
        model.params[f"{name}.weight"].data = rng.normal(0.1, 0.3, model.params[f"{name}.weight"].data.shape)
        model.params[f"{name}.bias"].data = rng.normal(0.0, 0.1, model.params[f"{name}.bias"].data.shape)
    x = nn.Tensor(tiny_input(rng), requires_grad=True)
    r1 = rng.normal(size=(1, 3, 8, 8))
    r2 = rng.normal(size=(1, 2, 2, 8, 8))
    r3 = rng.normal(size=(1, 8, 8))

    def run():
        pred = model.forward(x, training=True, update_stats=False)
        s = nn.tsum(pred.class_logits * nn.Tensor(r1))
        s = s + nn.tsum(pred.absolute_displacement() * nn.Tensor(r2))
        return s + nn.tsum(pred.static_logit * nn.Tensor(r3))

    picks = [
        x,
        model.params["lift.conv1.weight"].tensor,
        model.params["stc1.tconv.weight"].tensor,
        model.params["stc2.conv2.weight"].tensor,
        model.params["stc4.conv1.weight"].tensor,
        model.params["dec2.conv.weight"].tensor,
        model.params["dec1.conv.bn.gamma"].tensor,
        model.params["head_motion.conv1.weight"].tensor,
        model.params["head_cls.out.weight"].tensor,
        model.params["head_state.out.bias"].tensor,
    ]
    err = nn.fd_gradcheck(run, picks, samples_per_input=4, rng=np.random.default_rng(16))
    assert err < 1e-6, err


# -- persistence ------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    model = MotionNet(TINY, seed=18)
    model.forward(tiny_input(rng), training=True)  # move the running stats
    grid = GridSpec(-8.0, 8.0, -8.0, 8.0, -3.0, 2.0, 0.25, 0.25, 0.4)
    path = tmp_path / "model.mnckpt"
    model.save(str(path), grid=grid)

    loaded, loaded_grid = MotionNet.load(str(path))
    assert loaded.config == model.config
    assert loaded_grid == grid
    for name, p in model.params.items():
        np.testing.assert_array_equal(loaded.params[name].data, p.data)
    for name, buf in model.buffers.items():
        np.testing.assert_array_equal(loaded.buffers[name], buf)
    x = tiny_input(rng)
    np.testing.assert_array_equal(
        loaded.forward(x).class_logits.data, model.forward(x).class_logits.data
    )


def test_checkpoint_without_grid(tmp_path):
    model = MotionNet(TINY, seed=19)
    path = tmp_path / "model.mnckpt"
    model.save(str(path))
    _, grid = MotionNet.load(str(path))
    assert grid is None


def test_load_state_dict_missing_key():
    model = MotionNet(TINY, seed=20)
    arrays = model.state_dict()
    del arrays["param/stc3.conv1.weight"]
    with pytest.raises(KeyError, match="stc3.conv1.weight"):
        MotionNet(TINY, seed=21).load_state_dict(arrays)


def test_without_batch_norm():
    cfg = StpnConfig(
        in_channels=3, frames=3, channels=(2, 3, 4, 5), lift_channels=2,
        head_channels=2, temporal_kernel=2, categories=3, n_steps=2, batch_norm=False,
    )
    model = MotionNet(cfg, seed=22)
    assert not model.buffers
    assert not any(".bn." in n for n in model.params)
    pred = model.forward(tiny_input(np.random.default_rng(23)))
    assert np.all(np.isfinite(pred.class_logits.data))
