import numpy as np

from .exceptions import ArgumentError

_U64 = (1 << 64) - 1
_CHUNK = 1 << 22


def make_rng(seed):
    """Fresh generator for one operation call; any Python int is folded to 64 bits."""
    return np.random.default_rng(int(seed) & _U64)


def as_points(X, d=None, name="X"):
    """Validate an (n, d) float array of finite points."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ArgumentError(f"{name} must be a non-empty (n, d) array, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ArgumentError(f"{name} has dimension {X.shape[1]}, expected {d}")
    if not np.all(np.isfinite(X)):
        raise ArgumentError(f"{name} contains non-finite entries")
    return X


def as_vector(x, d=None, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim != 1:
        raise ArgumentError(f"{name} must be a vector, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ArgumentError(f"{name} has length {x.shape[0]}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ArgumentError(f"{name} contains non-finite entries")
    return x


def sq_dists(X, Y):
    """Pairwise squared Euclidean distances, shape (len(X), len(Y))."""
    # direct differences, not the |x|^2 + |y|^2 - 2xy expansion: exact at x == y
    out = np.empty((X.shape[0], Y.shape[0]))
    step = max(1, _CHUNK // max(1, Y.shape[0] * X.shape[1]))
    for i in range(0, X.shape[0], step):
        diff = X[i : i + step, None, :] - Y[None, :, :]
        out[i : i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out
