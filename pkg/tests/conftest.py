import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def dense_block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def random_with_kappa(rng, rows, cols, kappa):
    """Matrix with squared condition number exactly kappa (sigma in [1, sqrt(kappa)])."""
    k = min(rows, cols)
    if k == 1:
        sv = np.array([1.0])
    else:
        sv = np.concatenate([[1.0, np.sqrt(kappa)],
                             rng.uniform(1.0, np.sqrt(kappa), k - 2)])
    U, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    V, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
    return U[:, :k] @ np.diag(sv) @ V[:, :k].T
