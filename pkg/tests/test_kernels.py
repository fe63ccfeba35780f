import os
import subprocess
import sys

import numpy as np
import pytest

from ctxsched import kernels
from ctxsched.penalty import SAFETY_LOSS, build_penalty_table
from helpers import random_sources

JIT = kernels.load("numba")
VEC = kernels.load("numpy")


@pytest.fixture(scope="module")
def small_arm():
    src = random_sources(3, 1, sizes=(6,))[0]
    return src, build_penalty_table(src, SAFETY_LOSS, delta_max=15)


def csr_args(src):
    c = src.csr
    return c.indptr, c.indices, c.data


def test_propagate_agrees(grid):
    v0 = np.random.default_rng(0).random((grid.n_states, 3))
    a = JIT.propagate(*csr_args(grid), v0, 40)
    b = VEC.propagate(*csr_args(grid), v0, 40)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a[39], grid.power(40) @ v0, atol=1e-12)


def test_reset_value_agrees(grid):
    h1 = np.random.default_rng(1).normal(size=grid.n_states)
    np.testing.assert_allclose(JIT.expected_reset_value(*csr_args(grid), h1, 25),
                               VEC.expected_reset_value(*csr_args(grid), h1, 25), atol=1e-12)


@pytest.mark.parametrize("damping", [1.0, 0.95])
def test_rvi_agrees(small_arm, damping):
    src, tab = small_arm
    q = np.ascontiguousarray(tab.cost)
    args = (*csr_args(src), q, src.success_prob, 0.7, np.zeros_like(q), 1e-10, 100_000, damping)
    ha, ga, sa, ia, oka = JIT.rvi(*args)
    hb, gb, sb, ib, okb = VEC.rvi(*args)
    assert oka and okb
    assert abs(ia - ib) <= 1
    assert ga == pytest.approx(gb, abs=1e-9)
    np.testing.assert_allclose(ha, hb, atol=1e-7)


def test_renewal_agrees(small_arm):
    src, tab = small_arm
    q = np.ascontiguousarray(tab.cost)
    policy = np.random.default_rng(2).random(q.shape) < 0.3
    for x, y in zip(JIT.renewal(*csr_args(src), q, policy, src.success_prob),
                    VEC.renewal(*csr_args(src), q, policy, src.success_prob)):
        np.testing.assert_allclose(x, y, atol=1e-10)


def test_policy_codes_match():
    for name in ("POLICY_NETGAIN", "POLICY_RANDOMIZED", "POLICY_PERIODIC", "POLICY_MAXAGE"):
        assert getattr(JIT, name) == getattr(VEC, name)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.load("cuda")


@pytest.mark.parametrize("flag,expect", [("numpy", "numpy"), ("numba", "numba")])
def test_environment_flag(flag, expect):
    env = {**os.environ, "CTXSCHED_BACKEND": flag}
    out = subprocess.run([sys.executable, "-c", "from ctxsched import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect
