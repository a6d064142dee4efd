import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpruner.clusters import ClusterSet, get_candidates
from mpruner.cka import cka_chain
from mpruner.errors import InvalidArgumentError, StructuralError
from mpruner.nn import BlockSpec, build_model, build_model_from_specs, forward
from mpruner.pruner import magnitude_sparsify, prune, select_deletions, sparsify_rows, wanda_scores

SPEC = BlockSpec(width=8, inner_width=8)


def identity_stack(num_blocks=12, identities=range(4, 12), scale=3.0, seed=0):
    m = build_model(8, num_blocks, BlockSpec(width=16, inner_width=32), 4, seed=seed)
    for i in range(num_blocks):
        p = m.blocks[i].params
        if i in identities:
            p["fc2_w"][...] = 0
            p["fc2_b"][...] = 0
        else:
            p["fc1_w"] *= scale
            p["fc2_w"] *= scale
    return m


def test_granularity_examples():
    assert select_deletions([2, 3, 4, 5], 1) == [3, 4, 5]
    assert select_deletions([2, 3, 4, 5], 2) == [3, 5]
    assert select_deletions([2, 3, 4, 5], 3) == [3]
    assert select_deletions([7], 1) == []
    with pytest.raises(InvalidArgumentError):
        select_deletions([1, 2], 0)


@given(st.integers(1, 20), st.integers(1, 6))
def test_deletions_never_take_first_member(size, k):
    cluster = list(range(10, 10 + size))
    dels = select_deletions(cluster, k)
    assert cluster[0] not in dels
    assert len(dels) == -(-(size - 1) // k)


def test_prune_counts_are_conserved():
    m = build_model(4, 6, SPEC, 3, seed=0)
    out = prune(m, ClusterSet([[0], [1, 2, 3], [4, 5]], 0.9), k=1)
    assert out.deleted == [2, 3, 5]
    per_block = m.blocks[0].parameter_count()
    assert out.params_before - out.params_after == 3 * per_block
    assert out.pruned_model.num_blocks == 3
    assert out.pruned_model.hook_positions == [0, 1, 2]
    # survivors 0, 1, 4 -> neighbours of deletion sites in new numbering
    assert out.adjacent == [1, 2]
    assert out.freeze_set == []


def test_prune_identity_blocks_bitwise():
    m = identity_stack()
    hooks = [0, 1, 2] + list(range(4, 12))
    m.hook_positions = hooks
    rng = np.random.default_rng(1)
    chain = cka_chain(m, hooks, [rng.normal(size=(32, 8)) for _ in range(4)])
    clusters = get_candidates(chain, hooks, 0.98)
    assert clusters.clusters[-1] == list(range(4, 12))
    out = prune(m, clusters, k=1)
    assert out.deleted == list(range(5, 12))
    x = rng.normal(size=(16, 8))
    assert forward(out.pruned_model, x).tobytes() == forward(m, x).tobytes()


def test_default_hooks_pull_predecessor_into_cluster():
    # with every block hooked, hook 3 equals hook 4 when block 4 is an identity
    m = identity_stack()
    rng = np.random.default_rng(1)
    chain = cka_chain(m, None, [rng.normal(size=(32, 8)) for _ in range(4)])
    clusters = get_candidates(chain, m.hook_positions, 0.98)
    assert clusters.clusters[-1] == list(range(3, 12))


def test_dimension_mismatch_freezes_instead_of_deleting():
    specs = [BlockSpec(width=8, inner_width=4), BlockSpec(width=12, inner_width=4, in_width=8),
             BlockSpec(width=12, inner_width=4), BlockSpec(width=12, inner_width=4)]
    m = build_model_from_specs(3, specs, 2, seed=0)
    out = prune(m, ClusterSet([[0, 1, 2, 3]], 0.9), k=1)
    # deleting block 1 would join an 8-wide output to a 12-wide input
    assert out.deleted == [2, 3]
    assert out.freeze_set == [0, 1]
    assert out.pruned_model.num_blocks == 2


def test_protect_last_cluster():
    m = build_model(4, 6, SPEC, 3, seed=0)
    clusters = ClusterSet([[0, 1], [2], [3, 4, 5]], 0.9)
    assert prune(m, clusters, 1, protect_last_cluster=True).deleted == [1]
    assert prune(m, clusters, 1).deleted == [1, 4, 5]


def test_prune_errors():
    m = build_model(4, 3, SPEC, 3, seed=0)
    with pytest.raises(InvalidArgumentError):
        prune(m, ClusterSet([[0, 1]], 0.9), 1)
    one = build_model(4, 1, SPEC, 3, seed=0)
    assert prune(one, ClusterSet([[0]], 0.9), 1).deleted == []


def test_refuses_to_empty_model(monkeypatch):
    import mpruner.pruner as pruner

    m = build_model(4, 3, SPEC, 3, seed=0)
    monkeypatch.setattr(pruner, "select_deletions", lambda c, k: list(c))
    with pytest.raises(StructuralError):
        prune(m, ClusterSet([[0, 1, 2]], 0.9), 1)


def test_sparsify_rows_brute_force():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 6))
    norms = rng.uniform(0.5, 2.0, size=6)
    out = sparsify_rows(w, wanda_scores(w, norms), 0.5)
    scores = np.abs(w) * np.sqrt(norms)
    for r in range(5):
        keep = sorted(range(6), key=lambda j: -scores[r, j])[:3]
        for j in range(6):
            assert out[r, j] == (w[r, j] if j in keep else 0.0)


def test_sparsify_rows_floor():
    w = np.ones((2, 5))
    assert np.count_nonzero(sparsify_rows(w, w, 0.5) == 0, axis=1).tolist() == [2, 2]
    assert np.array_equal(sparsify_rows(w, w, 0.1), w)


def test_magnitude_sparsify_zero_counts():
    m = build_model(4, 3, BlockSpec(width=8, inner_width=16), 3, seed=0)
    calib = np.random.default_rng(0).normal(size=(32, 4))
    sparse = magnitude_sparsify(m, 0.5, calib)
    for name, w in sparse.named_parameters():
        orig = dict(m.named_parameters())[name]
        if name.startswith("blocks.") and name.endswith("_w"):
            assert np.all(np.sum(w == 0, axis=1) == w.shape[1] // 2)
        else:
            assert w.tobytes() == orig.tobytes()
    assert sparse.nonzero_parameter_count() < m.nonzero_parameter_count()
    assert magnitude_sparsify(m, 0.0, calib).nonzero_parameter_count() == m.nonzero_parameter_count()
    full = magnitude_sparsify(m, 0.5, calib, include_embed_head=True)
    assert np.sum(full.head["weight"] == 0) == 3 * 4


@pytest.mark.parametrize("sparsity", [-0.1, 1.0])
def test_magnitude_sparsify_rejects(sparsity):
    m = build_model(4, 2, SPEC, 3, seed=0)
    with pytest.raises(InvalidArgumentError):
        magnitude_sparsify(m, sparsity, np.ones((4, 4)))
    with pytest.raises(InvalidArgumentError):
        magnitude_sparsify(m, 0.5, np.zeros((0, 4)))
