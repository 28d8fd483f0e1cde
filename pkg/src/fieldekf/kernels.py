"""Backend selection for the per-pixel kernels.

The compiled extension is used when it imports; setting
``FIELDEKF_PURE_PYTHON=1`` forces the numpy fallback. Both backends expose
identical functions, so ``get_backend`` lets callers compare them directly.

Reductions accept ``workers``: with ``workers == 1`` (deterministic mode) the
pixel sum runs in a single fixed order; with more workers the pixels are cut
into contiguous chunks reduced on a thread pool and the partial sums are
added in chunk order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from fieldekf import _kernels_py

try:
    if os.environ.get("FIELDEKF_PURE_PYTHON") == "1":
        raise ImportError("pure python requested")
    from fieldekf import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_default = _compiled if _compiled is not None else _kernels_py


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name: str | None = None):
    if name is None:
        return _default
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _reduce(fn, arrays, valid, scale, workers, shared=()):
    """Run ``fn`` over pixel chunks; arrays at positions in ``shared`` are not split."""
    N = valid.shape[0]
    if workers <= 1 or N < 2 * workers:
        return fn(*arrays, valid, scale)
    bounds = np.linspace(0, N, workers + 1).astype(int)
    chunks = [
        ([a if i in shared else a[lo:hi] for i, a in enumerate(arrays)], valid[lo:hi])
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: fn(*c[0], c[1], scale), chunks))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def _flat(a, tail_dims):
    a = np.asarray(a, dtype=float)
    return np.ascontiguousarray(a.reshape((-1,) + a.shape[a.ndim - tail_dims:]))


def _flat_valid(valid, N):
    if valid is None:
        return np.ones(N, dtype=np.uint8)
    return np.ascontiguousarray(np.asarray(valid).reshape(-1), dtype=np.uint8)


def gram_white(G, Sinv, valid, scale, workers=1, backend=None):
    """scale * sum_i G_i^T Sinv G_i over valid pixels; G is (..., m, k)."""
    G = _flat(G, 2)
    Sinv = np.ascontiguousarray(np.atleast_2d(Sinv), dtype=float)
    impl = get_backend(backend)
    return _reduce(impl.gram_white, [G, Sinv], _flat_valid(valid, G.shape[0]), float(scale), workers, shared=(1,))


def gram_general(phi, G, valid, scale, workers=1, backend=None):
    """scale * sum_i phi_i G_i; phi is (..., k, m), G is (..., m, k)."""
    G = _flat(G, 2)
    phi = _flat(phi, 2)
    impl = get_backend(backend)
    return _reduce(impl.gram_general, [phi, G], _flat_valid(valid, G.shape[0]), float(scale), workers)


def project_white(G, Sinv, z, valid, scale, workers=1, backend=None):
    """scale * sum_i G_i^T Sinv z_i; z is (..., m)."""
    G = _flat(G, 2)
    z = _flat(z, 1)
    Sinv = np.ascontiguousarray(np.atleast_2d(Sinv), dtype=float)
    impl = get_backend(backend)
    return _reduce(impl.project_white, [G, Sinv, z], _flat_valid(valid, G.shape[0]), float(scale), workers, shared=(1,))


def project_general(phi, z, valid, scale, workers=1, backend=None):
    """scale * sum_i phi_i z_i."""
    phi = _flat(phi, 2)
    z = _flat(z, 1)
    impl = get_backend(backend)
    return _reduce(impl.project_general, [phi, z], _flat_valid(valid, phi.shape[0]), float(scale), workers)


def render_jacobian(C, Cx, Cy, map_origin, map_pitch, sensor_x, sensor_y,
                    px, py, height, theta, focal, elev_grad=(0.0, 0.0), backend=None):
    impl = get_backend(backend)
    return impl.render_jacobian(
        np.ascontiguousarray(C, dtype=float),
        np.ascontiguousarray(Cx, dtype=float),
        np.ascontiguousarray(Cy, dtype=float),
        tuple(float(o) for o in map_origin),
        tuple(float(p) for p in map_pitch),
        np.ascontiguousarray(sensor_x, dtype=float),
        np.ascontiguousarray(sensor_y, dtype=float),
        float(px), float(py), float(height), float(theta), float(focal),
        tuple(float(e) for e in elev_grad),
    )


sample_bilinear = _kernels_py.sample_bilinear
