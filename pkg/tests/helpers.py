"""Shared test oracles: central finite differences against analytic gradients."""

import numpy as np

from svdrank.scorer import ScorerParameters, forward, gradients

FD_STEP = 1e-4
REL_TOL = 1e-4
# Differences below this are rounding noise from the FD subtraction itself;
# they carry no gradient signal to compare against.
ABS_FLOOR = 1e-10
KINK_MARGIN = 1e-2


def min_preactivation(cache) -> float:
    """Smallest |pre-ReLU activation| seen in a forward pass; instances close
    to a kink make finite differences meaningless and are resampled."""
    names = [n for n in cache.arrays if n == "h_pre" or n.startswith("z")]
    return min(float(np.min(np.abs(cache.arrays[n]))) for n in names)


def fd_gradcheck(params: ScorerParameters, x: np.ndarray, mode: str = "eval",
                 dropout_seed: int = 0) -> tuple[float, int]:
    """Central-difference check of every parameter coordinate.

    Returns (worst relative error, number of coordinates compared). Train
    mode re-creates the dropout RNG per evaluation so the mask is fixed.
    """

    def run(p):
        rng = np.random.default_rng(dropout_seed) if mode == "train" else None
        return forward(p, x, mode=mode, dropout_rng=rng)

    out = run(params)
    grads = gradients(params, 1.0, out.cache)
    worst = 0.0
    checked = 0
    for name, arr in params.tensors.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + FD_STEP
            f_plus = run(params).score
            flat[k] = orig - FD_STEP
            f_minus = run(params).score
            flat[k] = orig
            fd = (f_plus - f_minus) / (2.0 * FD_STEP)
            checked += 1
            if fd == g[k] or abs(fd - g[k]) < ABS_FLOOR:
                continue
            worst = max(worst, abs(fd - g[k]) / max(abs(fd), abs(g[k])))
    return worst, checked
