"""Gaussian random fields by truncated Karhunen-Loeve expansion.

Covariance is the squared-exponential kernel with per-axis length scales;
realizations are linear combinations of scaled eigenmodes with standard
normal coefficients drawn from a reproducible xoshiro256** stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams
from .kernels.dist import sqdist_kernel
from .kernels.rng import box_muller, fill_u64_kernel, seed_state, u64_to_unit
from .linalg import sym_eig

DEFAULT_ENERGY_FRACTION = 0.99
KLE_JITTER = 1e-10  # covariance factorization jitter; smooth kernels are rank-deficient


@dataclass(frozen=True)
class SeCovarianceParams:
    """Squared-exponential kernel parameters; ly is None for 1-D fields."""

    lx: float
    ly: float | None
    sigma2: float

    def validate(self) -> None:
        if self.lx <= 0.0 or (self.ly is not None and self.ly <= 0.0) or self.sigma2 <= 0.0:
            raise InvalidParams(f"length scales and variance must be positive: {self}")


# Named parameter sets used by the dataset generators (addressable from config).
FIELD_PRESETS: dict[str, SeCovarianceParams] = {
    "brusselator-source": SeCovarianceParams(0.30, 0.40, 0.15),
    "brusselator-ood1": SeCovarianceParams(0.11, 0.15, 0.15),
    "brusselator-ood2": SeCovarianceParams(0.35, 0.45, 0.15),
    "darcy": SeCovarianceParams(0.30, 0.40, 0.15),
    "burgers": SeCovarianceParams(0.35, None, 0.05),
}


class RngStream:
    """Buffered xoshiro256** stream; (seed, stream) fully determines it.

    Parallel workers derive independent streams by passing distinct stream
    indices; seeding goes through SplitMix64 on seed + stream.
    """

    _CHUNK = 4096

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._state = seed_state(self.seed, self.stream)
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0
        self._spare_normal: float | None = None

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        filled = 0
        while filled < n:
            if self._pos == self._buf.size:
                self._buf = np.empty(self._CHUNK, dtype=np.uint64)
                fill_u64_kernel(self._state, self._buf)
                self._pos = 0
            take = min(n - filled, self._buf.size - self._pos)
            out[filled : filled + take] = self._buf[self._pos : self._pos + take]
            self._pos += take
            filled += take
        return out

    def uniform(self, n: int | None = None):
        """Doubles in (0, 1]."""
        if n is None:
            return float(u64_to_unit(self.u64(1))[0])
        return u64_to_unit(self.u64(n))

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        have = 0
        if self._spare_normal is not None and n > 0:
            out[0] = self._spare_normal
            self._spare_normal = None
            have = 1
        need = n - have
        if need > 0:
            pairs = (need + 1) // 2
            z = box_muller(self.u64(2 * pairs))
            out[have:] = z[:need]
            self._spare_normal = float(z[need]) if z.size > need else None
        return out

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection."""
        if bound <= 0:
            raise InvalidParams(f"randbelow: bound must be positive, got {bound}")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = int(self.u64(1)[0])
            if x < limit:
                return x % bound

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), by partial Fisher-Yates."""
        if k > n:
            raise InvalidParams(f"choice: cannot draw {k} distinct values from {n}")
        idx = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k].copy()


@dataclass(frozen=True)
class KleBasis:
    """Truncated KLE: modes columns are sqrt(eigenvalue) * eigenvector."""

    points: np.ndarray
    modes: np.ndarray
    retained: int
    energy_fraction: float
    captured: float


def se_covariance(points: np.ndarray, params: SeCovarianceParams) -> np.ndarray:
    """Dense squared-exponential covariance over the given points.

    points is (n,) or (n, 1) for 1-D fields and (n, 2) for 2-D fields;
    the diagonal is exactly sigma2.
    """
    params.validate()
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.size == 0 or not np.all(np.isfinite(pts)):
        raise InvalidParams("se_covariance: points must be non-empty and finite")
    if pts.shape[1] == 1:
        scales = np.array([params.lx])
    elif pts.shape[1] == 2:
        if params.ly is None:
            raise InvalidParams("se_covariance: 2-D points require ly")
        scales = np.array([params.lx, params.ly])
    else:
        raise InvalidParams(f"se_covariance: points must be 1-D or 2-D, got dim {pts.shape[1]}")
    z = np.ascontiguousarray(pts / scales)
    return params.sigma2 * np.exp(-0.5 * sqdist_kernel(z, z))


def kle_decompose(cov: np.ndarray, energy_fraction: float = DEFAULT_ENERGY_FRACTION,
                  points: np.ndarray | None = None) -> KleBasis:
    """Spectral truncation keeping the smallest mode count that reaches
    the requested energy fraction; negative eigenvalues are clamped first."""
    if not 0.0 < energy_fraction <= 1.0:
        raise InvalidParams(f"energy_fraction must be in (0, 1], got {energy_fraction}")
    eig = sym_eig(np.asarray(cov, dtype=np.float64))
    values = np.maximum(eig.values, 0.0)
    cumulative = np.cumsum(values)
    total = float(cumulative[-1])
    if total <= 0.0:
        raise InvalidParams("kle_decompose: covariance has no positive energy")
    retained = int(np.searchsorted(cumulative, energy_fraction * total) + 1)
    retained = min(retained, values.size)
    modes = eig.vectors[:, :retained] * np.sqrt(values[:retained])
    pts = np.zeros((cov.shape[0], 0)) if points is None else np.asarray(points, dtype=np.float64)
    return KleBasis(
        points=pts,
        modes=modes,
        retained=retained,
        energy_fraction=energy_fraction,
        captured=float(cumulative[retained - 1] / total),
    )


def sample_field(basis: KleBasis, rng: RngStream, xi: np.ndarray | None = None) -> np.ndarray:
    """One zero-mean realization: modes @ xi with xi iid standard normal.

    xi can be injected for tests; by default it is drawn from rng.
    """
    if xi is None:
        xi = rng.normals(basis.retained)
    return basis.modes @ np.asarray(xi, dtype=np.float64)
