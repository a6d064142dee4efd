import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mpruner.cka import (
    CkaChain,
    CkaMatrix,
    center,
    centering_matrix,
    cka,
    cka_chain,
    cka_full_matrix,
    gram,
    hsic,
    write_matrix,
)
from mpruner.errors import DegenerateActivationError, HookIndexError, InvalidArgumentError, ShapeError
from mpruner.nn import BlockSpec, build_model


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def test_gram_example():
    x = np.array([[1, 0], [0, 1], [1, 1]])
    np.testing.assert_array_equal(gram(x), [[1, 0, 1], [0, 1, 1], [1, 1, 2]])


def test_centering_matrix_n2():
    np.testing.assert_allclose(centering_matrix(2), [[0.5, -0.5], [-0.5, 0.5]])


def test_centered_rows_sum_to_zero():
    k = gram(np.random.default_rng(0).normal(size=(7, 3)))
    kc = center(k)
    np.testing.assert_allclose(kc.sum(0), 0, atol=1e-12)
    np.testing.assert_allclose(kc.sum(1), 0, atol=1e-12)


def test_input_validation():
    with pytest.raises(InvalidArgumentError):
        gram(np.ones((1, 3)))
    with pytest.raises(ShapeError):
        center(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        cka(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(DegenerateActivationError):
        cka(np.ones((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))


@given(st.integers(2, 16), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_hsic_matches_double_loop(n, p, q, seed):
    rng = np.random.default_rng(seed)
    k, l = gram(rng.normal(size=(n, p))), gram(rng.normal(size=(n, q)))
    assert hsic(k, l) == pytest.approx(oracles.hsic_double_loop(k.tolist(), l.tolist()), abs=1e-8)


def test_hsic_matches_printed_trace_form():
    rng = np.random.default_rng(4)
    k, l = gram(rng.normal(size=(9, 3))), gram(rng.normal(size=(9, 5)))
    h = centering_matrix(9)
    printed = np.trace(center(k) @ h @ center(l) @ h) / 64
    assert hsic(k, l) == pytest.approx(printed, abs=1e-10)


@given(st.integers(3, 20), st.integers(1, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_self_similarity_and_invariances(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.normal(size=(n, d))
    assert cka(x, x) == pytest.approx(1.0, abs=1e-6)
    base = cka(x, y)
    q = random_orthogonal(d, rng)
    assert cka(x @ q, y) == pytest.approx(base, abs=1e-5)
    assert cka(x * rng.uniform(0.1, 10), y) == pytest.approx(base, abs=1e-5)
    assert cka(x, y) == pytest.approx(cka(y, x), abs=1e-12)
    assert 0.0 <= base <= 1.0


def test_translation_invariance():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
    assert cka(x + 5.0, y) == pytest.approx(cka(x, y), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_against_reference(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(12, 5)), rng.normal(size=(12, 3)) + 0.3 * rng.normal(size=(12, 1))
    assert cka(x, y) == pytest.approx(oracles.cka_reference(x.tolist(), y.tolist()), abs=1e-8)


@pytest.fixture
def model():
    return build_model(4, 5, BlockSpec(width=8, inner_width=16), 3, seed=1)


def _seeds(m, size=16):
    rng = np.random.default_rng(7)
    return [rng.normal(size=(size, 4)) for _ in range(m)]


@pytest.mark.parametrize("m", [1, 2, 5])
def test_chain_is_mean_of_per_batch_chains(model, m):
    seeds = _seeds(m)
    per_batch = [cka_chain(model, None, [b]).values for b in seeds]
    chain = cka_chain(model, None, seeds)
    assert chain.seed_count == m
    np.testing.assert_allclose(chain.values, np.mean(per_batch, axis=0), atol=1e-9, rtol=0)


def test_chain_matches_reference_on_captures(model):
    from mpruner.nn import capture_activations

    batch = _seeds(1)[0]
    acts = capture_activations(model, batch, [1, 3])
    chain = cka_chain(model, [1, 3], [batch])
    assert chain.values[0] == pytest.approx(oracles.cka_reference(acts[1].tolist(), acts[3].tolist()), abs=1e-6)


def test_threaded_chain_matches_serial(model, monkeypatch):
    seeds = _seeds(4)
    serial = cka_chain(model, None, seeds).values
    monkeypatch.setenv("MPRUNER_THREADS", "3")
    assert cka_chain(model, None, seeds).values == serial


def test_full_matrix_symmetry_and_superdiagonal(model):
    seeds = _seeds(3)
    mat = cka_full_matrix(model, None, seeds)
    np.testing.assert_array_equal(mat.matrix, mat.matrix.T)
    np.testing.assert_array_equal(np.diag(mat.matrix), 1.0)
    np.testing.assert_allclose(mat.superdiagonal(), cka_chain(model, None, seeds).values, atol=1e-12)


def test_degenerate_hook_is_named(model):
    model.blocks[2].params["fc2_w"][...] = 0
    model.blocks[2].params["fc2_b"][...] = 0
    model.embed["weight"][...] = 0
    for i in (0, 1):
        model.blocks[i].params["fc2_w"][...] = 0
    with pytest.raises(DegenerateActivationError, match="hook 0"):
        cka_chain(model, None, _seeds(1))


def test_bad_hooks_and_seeds(model):
    with pytest.raises(HookIndexError):
        cka_chain(model, [0, 9], _seeds(1))
    with pytest.raises(InvalidArgumentError):
        cka_chain(model, None, [])
    with pytest.raises(InvalidArgumentError):
        cka_chain(model, None, [np.ones((1, 4))])


def test_serialisation_round_trips(model, tmp_path):
    seeds = _seeds(2)
    chain = cka_chain(model, None, seeds)
    text = chain.to_csv()
    assert text.splitlines()[0] == "hook_i,hook_j,cka"
    back = CkaChain.from_csv(text)
    assert back.hooks == chain.hooks
    np.testing.assert_allclose(back.values, chain.values, rtol=1e-8)
    mat = cka_full_matrix(model, None, seeds)
    write_matrix(mat, tmp_path)
    loaded = CkaMatrix.from_json((tmp_path / "cka_matrix.json").read_text())
    np.testing.assert_allclose(loaded.matrix, mat.matrix, rtol=1e-8)
    assert (tmp_path / "cka_matrix.csv").read_text().count("\n") == len(mat.hooks) + 1
