import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deptrigger.corpus import is_valid_bioes
from deptrigger.nernet import (
    TagSet,
    crf_log_partition,
    crf_marginals,
    crf_nll,
    crf_nll_grad,
    crf_path_score,
    crf_viterbi,
)
from deptrigger.numerics import kernels

from oracles import all_paths, brute_argmax, brute_log_partition, path_score


def random_instance(rng, L, K, scale=2.0):
    return rng.normal(scale=scale, size=(L, K)), rng.normal(scale=scale, size=(K + 2, K + 2))


def test_single_position_two_tags(crf_backend):
    assert crf_log_partition(np.zeros((1, 2)), np.zeros((4, 4))) == pytest.approx(math.log(2), abs=1e-15)


def test_enumeration_L3_K4(crf_backend, rng):
    E, T = random_instance(rng, 3, 4)
    assert abs(crf_log_partition(E, T) - brute_log_partition(E, T)) < 1e-9


def test_constant_shift_at_one_position(crf_backend, rng):
    E, T = random_instance(rng, 4, 3)
    base = crf_log_partition(E, T)
    E2 = E.copy()
    E2[2] += 3.7
    assert crf_log_partition(E2, T) == pytest.approx(base + 3.7, abs=1e-12)


def test_nll_single_tag_is_zero(crf_backend, rng):
    E, T = random_instance(rng, 5, 1)
    assert abs(crf_nll(E, T, [0] * 5)) < 1e-12


def test_nll_against_enumeration(crf_backend, rng):
    for _ in range(20):
        L, K = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        E, T = random_instance(rng, L, K)
        gold = [int(y) for y in rng.integers(0, K, size=L)]
        probs = [math.exp(path_score(E, T, p)) for p in all_paths(L, K)]
        expected = -math.log(math.exp(path_score(E, T, gold)) / sum(probs))
        assert abs(crf_nll(E, T, gold) - expected) < 1e-9


def test_nll_invalid_tag():
    with pytest.raises(ValueError):
        crf_nll(np.zeros((2, 2)), np.zeros((4, 4)), [0, 5])


def test_probabilities_sum_to_one(crf_backend, rng):
    E, T = random_instance(rng, 3, 3)
    logz = crf_log_partition(E, T)
    total = 0.0
    for p in all_paths(3, 3):
        pr = math.exp(crf_path_score(E, T, p) - logz)
        assert 0.0 < pr <= 1.0
        total += pr
    assert abs(total - 1.0) < 1e-12


def test_non_finite_emissions():
    E = np.zeros((2, 2))
    E[1, 1] = np.nan
    with pytest.raises(ValueError):
        crf_log_partition(E, np.zeros((4, 4)))


def test_viterbi_zero_transitions_is_argmax(crf_backend, rng):
    E = rng.normal(size=(6, 4))
    path, _ = crf_viterbi(E, np.zeros((6, 6)))
    assert path == list(np.argmax(E, axis=1))


def test_viterbi_against_enumeration(crf_backend, rng):
    for _ in range(30):
        L, K = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        E, T = random_instance(rng, L, K)
        path, score = crf_viterbi(E, T)
        ref_path, ref_score = brute_argmax(E, T)
        assert path == ref_path
        assert score == pytest.approx(ref_score, abs=1e-9)
        assert score == pytest.approx(crf_path_score(E, T, path), abs=1e-12)


def test_viterbi_tie_break_prefers_lower_ids(crf_backend):
    path, score = crf_viterbi(np.zeros((4, 3)), np.zeros((5, 5)))
    assert path == [0, 0, 0, 0]
    assert score == 0.0


def test_viterbi_shift_invariance(crf_backend):
    E = np.array([[0.0, 1.0, 0.5], [2.0, 0.0, 0.0], [0.0, 0.25, 3.0]])
    T = np.zeros((5, 5))
    T[1, 0] = 0.5
    base, _ = crf_viterbi(E, T)
    for c in (-10.0, 0.5, 1000.0):
        assert crf_viterbi(E + c, T)[0] == base


def test_marginals_match_enumeration(crf_backend, rng):
    E, T = random_instance(rng, 4, 3)
    logz, node, counts = crf_marginals(E, T)
    K = 3
    ref_node = np.zeros((4, K))
    ref_counts = np.zeros((K + 2, K + 2))
    for p in all_paths(4, K):
        w = math.exp(path_score(E, T, p) - logz)
        for t, y in enumerate(p):
            ref_node[t, y] += w
            if t:
                ref_counts[p[t - 1], y] += w
        ref_counts[K, p[0]] += w
        ref_counts[p[-1], K + 1] += w
    np.testing.assert_allclose(node, ref_node, atol=1e-12)
    np.testing.assert_allclose(counts, ref_counts, atol=1e-12)


def test_nll_gradient_finite_differences(crf_backend, rng):
    E, T = random_instance(rng, 5, 4, scale=1.0)
    gold = [0, 2, 2, 1, 3]
    _, dE, dT = crf_nll_grad(E, T, gold)
    eps = 1e-6
    for arr, grad in ((E, dE), (T, dT)):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = crf_nll(E, T, gold)
            arr[idx] = orig - eps
            down = crf_nll(E, T, gold)
            arr[idx] = orig
            assert abs((up - down) / (2 * eps) - grad[idx]) < 1e-7


def test_unused_transition_entries_have_zero_gradient(rng):
    E, T = random_instance(rng, 3, 2)
    _, _, dT = crf_nll_grad(E, T, [0, 1, 1])
    K = 2
    assert np.all(dT[:, K] == 0)  # nothing enters START
    assert np.all(dT[K + 1, :] == 0)  # nothing leaves STOP


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_backends_agree(L, K, seed):
    compiled = kernels.compiled_kernels()
    if compiled is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(seed)
    E, T = random_instance(rng, L, K)
    E, T = np.ascontiguousarray(E), np.ascontiguousarray(T)
    a_py, z_py = kernels.python_kernels.forward(E, T)
    a_cy, z_cy = compiled.forward(E, T)
    np.testing.assert_allclose(a_cy, a_py, atol=1e-12)
    assert abs(z_cy - z_py) < 1e-12
    np.testing.assert_allclose(compiled.backward(E, T), kernels.python_kernels.backward(E, T), atol=1e-12)
    p_py, s_py = kernels.python_kernels.viterbi(E, T)
    p_cy, s_cy = compiled.viterbi(E, T)
    assert list(p_py) == list(p_cy)
    assert abs(s_py - s_cy) < 1e-12


class TestConstrainedDecode:
    def test_allowed_mask(self):
        ts = TagSet(["PER"])
        ok = ts.allowed_transitions()
        K = len(ts)
        ix = ts.index
        assert ok[K, ix["B-PER"]] and ok[K, ix["S-PER"]] and ok[K, ix["O"]]
        assert not ok[K, ix["I-PER"]] and not ok[K, ix["E-PER"]]
        assert ok[ix["B-PER"], ix["E-PER"]] and not ok[ix["B-PER"], ix["O"]]
        assert not ok[ix["I-PER"], K + 1] and ok[ix["E-PER"], K + 1]
        assert not ok[:, K].any() and not ok[K + 1].any()

    def test_constrained_paths_are_valid(self, crf_backend, rng):
        ts = TagSet(["LOC", "PER"])
        K = len(ts)
        for _ in range(20):
            E = rng.normal(scale=3.0, size=(6, K))
            path, _ = crf_viterbi(E, np.zeros((K + 2, K + 2)), ts.allowed_transitions())
            assert is_valid_bioes(ts.decode(path))


def _backend_in_subprocess(env_value):
    import os
    import subprocess
    import sys

    env = dict(os.environ)
    env.pop("DEPTRIGGER_PURE_PYTHON", None)
    if env_value is not None:
        env["DEPTRIGGER_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from deptrigger.numerics import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_pure_python_switch():
    from deptrigger.numerics import kernels

    assert _backend_in_subprocess("1") == "python"
    expected = "cython" if kernels.compiled_kernels() is not None else "python"
    assert _backend_in_subprocess(None) == expected
