import numpy as np
import pytest

import oracles
from mpruner.errors import HookIndexError, InvalidArgumentError, ShapeError
from mpruner.nn import (
    Block,
    BlockKind,
    BlockSpec,
    block_param_count,
    build_model,
    build_model_from_specs,
    capture_activations,
    delete_block,
    forward,
)

RES = BlockSpec(width=8, inner_width=16)
ENC = BlockSpec(BlockKind.ENCODER, width=8, inner_width=12, tokens=2)


def zero_residual(model, index):
    """Make block ``index`` an exact identity by zeroing its output projection."""
    p = model.blocks[index].params
    p["fc2_w"][...] = 0.0
    p["fc2_b"][...] = 0.0
    if "o_w" in p:
        p["o_w"][...] = 0.0
        p["o_b"][...] = 0.0


def test_parameter_count_closed_form():
    m = build_model(4, 2, RES, 3, seed=7)
    embed = 4 * 8 + 8
    block = 2 * 8 + (16 * 8 + 16) + (8 * 16 + 8)
    head = 8 * 3 + 3
    assert m.parameter_count() == embed + 2 * block + head


def test_twelve_block_count_by_hand():
    spec = BlockSpec(width=16, inner_width=32)
    m = build_model(4, 12, spec, 2, seed=1)
    assert m.num_blocks == 12
    # layer shapes summed one by one
    shapes = [(16, 4), (16,)]
    for _ in range(12):
        shapes += [(16,), (16,), (32, 16), (32,), (16, 32), (16,)]
    shapes += [(2, 16), (2,)]
    assert m.parameter_count() == sum(int(np.prod(s)) for s in shapes)
    assert all(b.parameter_count() == block_param_count(spec) for b in m.blocks)


def test_encoder_count_matches_closed_form():
    m = build_model(4, 3, ENC, 3, seed=0)
    assert all(b.parameter_count() == block_param_count(ENC) for b in m.blocks)


def test_build_is_deterministic():
    a = build_model(4, 2, RES, 3, seed=7)
    b = build_model(4, 2, RES, 3, seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert pa.tobytes() == pb.tobytes()
    c = build_model(4, 2, RES, 3, seed=8)
    assert c.embed["weight"].tobytes() != a.embed["weight"].tobytes()


def test_init_bounds():
    m = build_model(5, 2, RES, 3, seed=3)
    assert np.all(np.abs(m.embed["weight"]) <= 1 / np.sqrt(5))
    fc2 = m.blocks[0].params["fc2_w"]
    assert np.all(np.abs(fc2) <= 1 / np.sqrt(16))
    assert all(m.is_trainable(n) for n, _ in m.named_parameters())


@pytest.mark.parametrize("kwargs", [
    dict(input_dim=0, num_blocks=2, num_classes=3),
    dict(input_dim=4, num_blocks=0, num_classes=3),
    dict(input_dim=4, num_blocks=2, num_classes=0),
])
def test_zero_dimension_rejected(kwargs):
    with pytest.raises(InvalidArgumentError):
        build_model(spec=RES, seed=0, **kwargs)


def test_zero_width_spec_rejected():
    with pytest.raises(InvalidArgumentError):
        BlockSpec(width=0)


def test_zero_head_gives_zero_logits():
    m = build_model(4, 3, RES, 3, seed=2)
    m.head["weight"][...] = 0
    m.head["bias"][...] = 0
    x = np.random.default_rng(0).normal(size=(7, 4))
    assert np.all(forward(m, x) == 0.0)


@pytest.mark.parametrize("spec", [RES, ENC], ids=["residual", "encoder"])
def test_forward_matches_scalar_oracle(spec):
    m = build_model(4, 3, spec, 3, seed=11)
    x = np.random.default_rng(1).normal(size=(5, 4))
    expected = np.array([oracles.forward_sample(m, row)[0] for row in x])
    np.testing.assert_allclose(forward(m.astype(np.float64), x), expected, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(forward(m, x), expected, rtol=1e-5, atol=1e-5)


def test_forward_rejects_wrong_width():
    m = build_model(4, 2, RES, 3, seed=0)
    with pytest.raises(ShapeError):
        forward(m, np.zeros((3, 5)))


def test_forward_is_pure():
    m = build_model(4, 3, RES, 3, seed=2)
    x = np.random.default_rng(0).normal(size=(6, 4))
    assert forward(m, x).tobytes() == forward(m, x).tobytes()


@pytest.mark.parametrize("spec", [RES, ENC], ids=["residual", "encoder"])
@pytest.mark.parametrize("position", [0, 2, 4])
def test_inserting_zero_residual_block_is_exact(spec, position):
    m = build_model(4, 4, spec, 3, seed=5)
    extra = build_model(4, 1, spec, 3, seed=99)
    zero_residual(extra, 0)
    grown = m.copy()
    grown.blocks.insert(position, extra.blocks[0])
    grown.hook_positions = list(range(grown.num_blocks))
    x = np.random.default_rng(3).normal(size=(9, 4)) * 3
    assert forward(grown, x).tobytes() == forward(m, x).tobytes()


def test_capture_last_hook_is_head_input():
    m = build_model(4, 3, RES, 3, seed=4)
    x = np.random.default_rng(0).normal(size=(6, 4))
    acts = capture_activations(m, x, [2])
    logits = acts[2].astype(np.float64) @ m.head["weight"].T.astype(np.float64) + m.head["bias"]
    np.testing.assert_allclose(logits, forward(m, x), rtol=1e-6, atol=1e-6)


def test_capture_identity_blocks_equal_embed_output():
    m = build_model(4, 4, RES, 3, seed=4)
    for i in range(4):
        zero_residual(m, i)
    x = np.random.default_rng(0).normal(size=(6, 4))
    acts = capture_activations(m, x, [0, 1, 2, 3])
    embed = (x.astype(np.float32).astype(np.float64) @ m.embed["weight"].T.astype(np.float64)).astype(np.float32)
    embed = embed + m.embed["bias"]
    for h in range(4):
        assert acts[h].tobytes() == acts[0].tobytes()
    np.testing.assert_allclose(acts[0], embed, rtol=1e-6, atol=1e-6)


def test_capture_matches_oracle_slices():
    m = build_model(4, 5, RES, 3, seed=8).astype(np.float64)
    x = np.random.default_rng(2).normal(size=(4, 4))
    hooks = [0, 2, 4]
    acts = capture_activations(m, x, hooks)
    for row, sample in enumerate(x):
        _, captured = oracles.forward_sample(m, sample, capture=hooks)
        for h in hooks:
            np.testing.assert_allclose(acts[h][row], captured[h], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("hooks", [[0, 5], [-1], [2, 1], [1, 1]])
def test_capture_rejects_bad_hooks(hooks):
    m = build_model(4, 3, RES, 3, seed=0)
    with pytest.raises(HookIndexError):
        capture_activations(m, np.zeros((2, 4)), hooks)


def test_delete_identity_block_is_bitwise_exact():
    m = build_model(4, 5, RES, 3, seed=6)
    zero_residual(m, 3)
    x = np.random.default_rng(0).normal(size=(10, 4))
    pruned = delete_block(m, 3)
    assert pruned.num_blocks == 4
    assert forward(pruned, x).tobytes() == forward(m, x).tobytes()


def test_delete_reduces_count_by_block_count():
    spec = BlockSpec(width=16, inner_width=32)
    m = build_model(4, 12, spec, 2, seed=1)
    pruned = delete_block(m, 5)
    assert pruned.num_blocks == 11
    assert m.parameter_count() - pruned.parameter_count() == block_param_count(spec)
    assert pruned.hook_positions == list(range(11))
    # surviving blocks keep order
    kept = [b.params["fc1_w"].tobytes() for i, b in enumerate(m.blocks) if i != 5]
    assert [b.params["fc1_w"].tobytes() for b in pruned.blocks] == kept


def test_delete_order_independent():
    m = build_model(4, 8, RES, 3, seed=2)
    desc = m
    for i in (5, 4, 3):
        desc = delete_block(desc, i)
    asc = m
    for i in (3, 3, 3):  # ascending: indices shift left after each removal
        asc = delete_block(asc, i)
    for (_, a), (_, b) in zip(desc.named_parameters(), asc.named_parameters()):
        assert a.tobytes() == b.tobytes()


def test_delete_reindexes_sparse_hooks():
    m = build_model(4, 6, RES, 3, seed=0)
    m.hook_positions = [0, 2, 3, 5]
    assert delete_block(m, 2).hook_positions == [0, 2, 4]
    assert delete_block(m, 1).hook_positions == [0, 1, 2, 4]


def test_delete_out_of_range():
    m = build_model(4, 3, RES, 3, seed=0)
    with pytest.raises(HookIndexError):
        delete_block(m, 3)


def test_projection_block_changes_width():
    specs = [BlockSpec(width=8, inner_width=8), BlockSpec(width=12, inner_width=8, in_width=8),
             BlockSpec(width=12, inner_width=8)]
    m = build_model_from_specs(3, specs, 2, seed=0)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert forward(m, x).shape == (4, 2)
    assert capture_activations(m, x, [0, 1])[1].shape == (4, 12)
    expected = np.array([oracles.forward_sample(m.astype(np.float64), r)[0] for r in x])
    np.testing.assert_allclose(forward(m.astype(np.float64), x), expected, rtol=1e-10)
    with pytest.raises(ShapeError):
        build_model_from_specs(3, [specs[0], specs[2]], 2)


def test_block_dataclass_widths():
    b = Block(BlockSpec(width=12, inner_width=4, in_width=8), {})
    assert (b.in_width, b.out_width) == (8, 12)
