"""Shared test fixtures and numerical helpers."""
import numpy as np
import pytest

from ranklab import data as rl_data


def fd_gradient(func, arrays, eps=1e-5):
    """Central-difference gradients of a scalar function of named arrays.

    `func(arrays) -> float` is re-evaluated with one coordinate nudged at a
    time, so it must not mutate its input.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = func(arrays)
            flat[i] = orig - eps
            lo = func(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def rel_err(analytic, numeric, floor=1e-6):
    """Worst relative error across named gradient arrays.

    The denominator is floored so tensors whose true gradient is ~0 (where
    central differences are pure roundoff noise) cannot dominate the check.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = max(np.abs(a).max(), np.abs(n).max(), floor)
        worst = max(worst, np.abs(a - n).max() / denom)
    return worst


@pytest.fixture(scope="session")
def tiny_log():
    """Small deterministic interaction log for model and training tests."""
    log = rl_data.synth_generate(users=40, items=30, latent_dim=2,
                                 seq_len_range=(5, 9), seed=3)
    return rl_data.k_core_filter(rl_data.log_to_raw(log), k=2)
