import time

import numpy as np
import pytest

from hoigen.autodiff import Tensor, grad_check
from hoigen.ssm import (MambaBlock, MambaConfig, MambaStack, block_flops, discretize_zoh,
                        scan_flops, selective_scan)


def recurrence_oracle(u, delta, A, B, C, D):
    """Explicit per-step loops over channels and states."""
    nb, length, nd = u.shape
    ns = A.shape[1]
    y = np.zeros_like(u)
    for b in range(nb):
        h = np.zeros((nd, ns))
        for t in range(length):
            for d in range(nd):
                for n in range(ns):
                    abar = np.exp(delta[b, t, d] * A[d, n])
                    h[d, n] = abar * h[d, n] + delta[b, t, d] * B[b, t, n] * u[b, t, d]
                y[b, t, d] = np.dot(C[b, t], h[d]) + D[d] * u[b, t, d]
    return y


def random_instance(rng, nb=2, length=5, nd=3, ns=4):
    return (rng.standard_normal((nb, length, nd)), rng.uniform(0.01, 1.0, (nb, length, nd)),
            -rng.uniform(0.1, 2.0, (nd, ns)), rng.standard_normal((nb, length, ns)),
            rng.standard_normal((nb, length, ns)), rng.standard_normal(nd))


def scan_np(*arrays):
    return selective_scan(*(Tensor(a) for a in arrays)).data


def test_discretize_examples():
    abar, bbar = discretize_zoh(0.5, 0.0, 1.0)
    assert abar == 1.0 and bbar == 0.5
    abar, _ = discretize_zoh(np.log(2.0), -1.0, 1.0)
    assert abs(abar - 0.5) < 1e-15


def test_discretize_matches_scalar_loop(rng):
    delta = rng.uniform(0.01, 1, (4, 1))
    A = -rng.uniform(0.1, 3, (4, 5))
    abar, bbar = discretize_zoh(delta, A, np.ones((4, 5)))
    for i in range(4):
        for j in range(5):
            assert abar[i, j] == pytest.approx(np.exp(delta[i, 0] * A[i, j]), rel=1e-15)
            assert bbar[i, j] == delta[i, 0]
    assert np.all(np.abs(abar) < 1)


def test_discretize_rejects_non_positive_step():
    with pytest.raises(ValueError):
        discretize_zoh(np.array([0.1, 0.0]), -1.0, 1.0)


def test_running_sum_example():
    u = np.array([[[1.0], [2.0], [3.0]]])
    ones = np.ones((1, 3, 1))
    # A = 0 gives abar = 1; delta = 1 gives bbar = B = 1
    y = scan_np(u, ones, np.zeros((1, 1)), ones, ones, np.zeros(1))
    np.testing.assert_allclose(y[0, :, 0], [1.0, 3.0, 6.0], rtol=1e-15)


def test_skip_only_when_readout_is_zero(rng):
    u, delta, A, B, C, D = random_instance(rng)
    y = scan_np(u, delta, A, B, np.zeros_like(C), D)
    np.testing.assert_allclose(y, D * u, rtol=1e-15)


def test_scan_matches_explicit_recurrence_on_100_instances():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        dims = dict(nb=int(r.integers(1, 3)), length=int(r.integers(1, 9)),
                    nd=int(r.integers(1, 5)), ns=int(r.integers(1, 6)))
        args = random_instance(r, **dims)
        worst = max(worst, np.abs(scan_np(*args) - recurrence_oracle(*args)).max())
    assert worst <= 1e-10


def test_two_dimensional_inputs(rng):
    u, delta, A, B, C, D = random_instance(rng, nb=1)
    y2 = scan_np(u[0], delta[0], A, B[0], C[0], D)
    np.testing.assert_array_equal(y2, scan_np(u, delta, A, B, C, D)[0])


@pytest.mark.parametrize("length", [1, 7, 32])
def test_time_invariant_scan_is_a_convolution(rng, length):
    nd, ns = 3, 4
    u = rng.standard_normal((1, length, nd))
    delta = np.broadcast_to(rng.uniform(0.05, 0.5, nd), (1, length, nd)).copy()
    A = -rng.uniform(0.1, 2.0, (nd, ns))
    Bv, Cv = rng.standard_normal(ns), rng.standard_normal(ns)
    B = np.broadcast_to(Bv, (1, length, ns)).copy()
    C = np.broadcast_to(Cv, (1, length, ns)).copy()
    D = rng.standard_normal(nd)
    y = scan_np(u, delta, A, B, C, D)
    for d in range(nd):
        abar, bbar = discretize_zoh(delta[0, 0, d], A[d], Bv)
        kernel = np.array([Cv @ (abar ** j * bbar) for j in range(length)])
        conv = np.array([kernel[:t + 1][::-1] @ u[0, :t + 1, d] for t in range(length)])
        np.testing.assert_allclose(y[0, :, d], conv + D[d] * u[0, :, d], atol=1e-8)


def test_length_mismatch_rejected(rng):
    u, delta, A, B, C, D = random_instance(rng)
    with pytest.raises(ValueError, match="selective_scan"):
        scan_np(u, delta, A, B[:, :-1], C, D)


def test_scan_gradients(rng):
    args = [Tensor(a) for a in random_instance(rng, nb=2, length=6, nd=3, ns=4)]
    assert grad_check(selective_scan, args) < 1e-6


def test_block_gradients_over_every_parameter(rng):
    cfg = MambaConfig(d_model=8, d_state=4)
    block = MambaBlock(cfg, rng)
    params = block.parameters()
    x = Tensor(rng.standard_normal((2, 4, 8)))
    assert grad_check(lambda x, *p: block(x), [x] + params) < 1e-4


def test_single_step_block_is_finite(rng):
    block = MambaBlock(MambaConfig(d_model=8), rng)
    y = block(Tensor(rng.standard_normal((1, 8)))).data
    assert y.shape == (1, 8) and np.all(np.isfinite(y))


def test_zero_input_returns_residual(rng):
    block = MambaBlock(MambaConfig(d_model=8), rng)
    for lin in (block.in_proj, block.out_proj):
        lin.bias.data[...] = 0
    for br in block.branches:
        br.conv_bias.data[...] = 0
    y = block(Tensor(np.zeros((2, 5, 8)))).data
    np.testing.assert_array_equal(y, 0.0)


def test_bidirectional_palindrome_symmetry(rng):
    block = MambaBlock(MambaConfig(d_model=8, bidirectional=True), rng)
    fwd, rev = block.branches
    for (_, a), (_, b) in zip(fwd.named_parameters(), rev.named_parameters()):
        b.data = a.data.copy()
    half = rng.standard_normal((3, 8))
    seq = np.concatenate([half, half[::-1]])            # 6-step palindrome
    y = block(Tensor(seq)).data
    np.testing.assert_allclose(y, y[::-1], atol=1e-12)


def test_stack_applies_blocks_in_order(rng):
    stack = MambaStack(MambaConfig(d_model=8), 2, rng)
    x = Tensor(rng.standard_normal((1, 3, 8)))
    np.testing.assert_array_equal(stack(x).data, stack.blocks[1](stack.blocks[0](x)).data)


def test_flop_counters_are_linear_in_length():
    cfg = MambaConfig(d_model=16)
    assert scan_flops(3, 20, 32, 16) == 2 * scan_flops(3, 10, 32, 16)
    assert block_flops(cfg, 2, 64) == 2 * block_flops(cfg, 2, 32)


def _best(fn, reps=5, inner=1):
    """Fastest of ``reps`` rounds, each timing ``inner`` back-to-back calls."""
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, time.perf_counter() - t0)
    return best / inner


@pytest.mark.slow
def test_scan_runtime_grows_linearly(rng):
    # a cache-resident instance, so the ratio reflects the recurrence rather than memory tiers
    times = {}
    for length in (256, 512, 1024):
        args = [Tensor(a) for a in random_instance(rng, nb=1, length=length, nd=64, ns=16)]
        selective_scan(*args)
        times[length] = _best(lambda: selective_scan(*args), reps=9, inner=40)
    for length in (256, 512):
        assert 1.6 <= times[2 * length] / times[length] <= 2.6, times
