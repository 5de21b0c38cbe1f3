import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoalign.errors import ShapeMismatchError, ZeroNormError
from protoalign.numerics import (
    AdamState,
    Rng,
    adam_step,
    cosine,
    derive_seed,
    l2_normalize,
    sgd_step,
)

finite_vectors = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=16,
)


def test_l2_normalize_345_triangle():
    assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_unit_vector_is_identity():
    e1 = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(l2_normalize(e1), e1)


def test_l2_normalize_zero_vector_raises():
    with pytest.raises(ZeroNormError):
        l2_normalize([0.0, 0.0])


def test_l2_normalize_rowwise():
    m = np.array([[3.0, 4.0], [0.0, 2.0]])
    out = l2_normalize(m)
    assert np.allclose(out, [[0.6, 0.8], [0.0, 1.0]])


@given(finite_vectors)
def test_l2_normalize_idempotent(values):
    v = np.array(values)
    if np.linalg.norm(v) < 1e-6:
        return
    once = l2_normalize(v)
    twice = l2_normalize(once)
    assert np.max(np.abs(twice - once)) < 1e-12
    assert abs(np.linalg.norm(once) - 1.0) < 1e-12


def test_cosine_identical_unit_vectors():
    assert cosine([0.0, 1.0], [0.0, 1.0]) == 1.0


def test_cosine_orthogonal():
    assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_45_degrees():
    assert cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.7071067811865475, abs=1e-15)


def test_cosine_zero_raises():
    with pytest.raises(ZeroNormError):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_cosine_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])


@given(finite_vectors, finite_vectors)
def test_cosine_symmetry_and_range(a, b):
    n = min(len(a), len(b))
    u, v = np.array(a[:n]), np.array(b[:n])
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    assert cosine(u, v) == cosine(v, u)
    assert -1.0 <= cosine(u, v) <= 1.0


@given(finite_vectors, st.floats(min_value=1e-3, max_value=1e3))
def test_cosine_scale_invariance(a, alpha):
    v = np.array(a)
    if np.linalg.norm(v) < 1e-6:
        return
    u = v[::-1].copy() + 0.5
    if np.linalg.norm(u) < 1e-6:
        return
    assert abs(cosine(alpha * u, v) - cosine(u, v)) < 1e-12


def test_cosine_clamps_rounding():
    # Seed 4 yields a unit vector whose raw self-dot is 1.0000000000000002.
    v = l2_normalize(Rng(4).normals(37))
    assert float(np.dot(v, v)) > 1.0
    assert cosine(v * 3.0, v * 7.0) == 1.0


def test_adam_zero_grads_leave_params():
    p = np.array([0.3, -1.2])
    out, state = adam_step(p, np.zeros(2), AdamState())
    assert np.max(np.abs(out - p)) < 1e-15
    assert state.step == 1


def test_adam_first_step_hand_value():
    # m_hat = v_hat = 1 after bias correction, so the update is -lr / (1 + eps).
    out, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState())
    assert out[0] == pytest.approx(-1e-4, rel=1e-6)


def test_adam_symmetry_between_identical_coordinates():
    p = np.array([0.5, 0.5])
    g = np.array([0.2, 0.2])
    out, _ = adam_step(p, g, AdamState())
    assert out[0] == out[1]


def test_adam_is_deterministic():
    p = np.array([[0.1, -0.4], [2.0, 0.0]])
    g = np.array([[0.3, 0.3], [-0.1, 0.9]])
    s = AdamState(learning_rate=1e-3)
    a1, s1 = adam_step(p, g, s)
    a2, s2 = adam_step(p, g, s)
    assert np.array_equal(a1, a2)
    b1, _ = adam_step(a1, g, s1)
    b2, _ = adam_step(a2, g, s2)
    assert np.array_equal(b1, b2)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        adam_step(np.zeros(3), np.zeros(2), AdamState())


def test_adam_state_steps_increase():
    p, g = np.zeros(1), np.ones(1)
    state = AdamState()
    for expected in (1, 2, 3):
        p, state = adam_step(p, g, state)
        assert state.step == expected


def test_sgd_step():
    out = sgd_step(np.array([1.0]), np.array([2.0]), 0.5)
    assert out[0] == 0.0


def test_rng_same_seed_same_stream():
    a = Rng(1234)
    b = Rng(1234)
    assert [a.next_u64() for _ in range(10_000)] == [b.next_u64() for _ in range(10_000)]


def test_rng_reference_values_frozen():
    # Anchors the exact integer stream; a change here breaks every stored seed.
    r = Rng(42)
    assert [r.next_u64() for _ in range(4)] == [
        1546998764402558742,
        6990951692964543102,
        12544586762248559009,
        17057574109182124193,
    ]
    assert r.random() == pytest.approx(0.9918039142821028, abs=0)
    assert r.integer(10) == 4


def test_rng_normal_reference_values():
    r = Rng(7)
    draws = [r.normal() for _ in range(3)]
    assert draws == pytest.approx(
        [0.9643618527255184, -1.0637531974798475, -0.3039301238656567], abs=1e-15
    )


def test_rng_normals_shape_and_determinism():
    a = Rng(5).normals(3, 4)
    b = Rng(5).normals(3, 4)
    assert a.shape == (3, 4)
    assert np.array_equal(a, b)


def test_rng_shuffle_and_sampling_reference():
    r = Rng(9)
    assert r.sample_prefix(10, 4) == [0, 2, 9, 4]
    assert r.permutation(5) == [3, 1, 4, 0, 2]


def test_rng_sample_prefix_is_without_replacement():
    for seed in range(50):
        picked = Rng(seed).sample_prefix(20, 12)
        assert len(set(picked)) == 12
        assert all(0 <= i < 20 for i in picked)


def test_rng_integer_bounds_and_uniformity():
    r = Rng(11)
    counts = [0] * 5
    for _ in range(5000):
        counts[r.integer(5)] += 1
    assert all(850 < c < 1150 for c in counts)


def test_derive_seed_stable_and_order_sensitive():
    assert derive_seed(7, "bucket", "effusion") == 2535159402774912923
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert derive_seed("1") != derive_seed(1)
