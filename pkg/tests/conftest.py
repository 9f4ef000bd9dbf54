import numpy as np
import pytest

from vidmark.mapping import MappingConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Smallest legal config; keeps model tests fast."""
    return MappingConfig(d_e=3, d_d=3, L=4, T=2, H=8, W=8)


def fd_gradient_check(f, params, rng, n_coords=10, eps=1e-6, tol=1e-3):
    """Central-difference check of f() against analytic grads of params.

    Near-zero gradients (e.g. conv biases cancelled by normalization)
    compare against an absolute floor instead of blowing up the ratio.
    """
    out = f()
    out.backward()
    analytic = [p.grad.copy() for p in params]
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            fp = f().item()
            flat[i] = old - eps
            fm = f().item()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            a = an.reshape(-1)[i]
            rel = abs(a - num) / max(1e-6, abs(num), abs(a))
            assert rel < tol, f"gradient mismatch: analytic={a} numeric={num} rel={rel}"
        p.grad = None
