"""von Mises-Fisher distribution on the unit sphere S^{m-1}.

Bessel functions are evaluated in log space: the normalizer
``C_m(k) = k^{m/2-1} / ((2 pi)^{m/2} I_{m/2-1}(k))`` under/overflows long
before the latent dimensions and concentrations used here get large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import gammaln

MAX_REJECTIONS = 10**6


class VmfError(ValueError):
    pass


class NotUnit(VmfError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size < 2:
            raise VmfError("vMF needs dimension m >= 2")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
            raise NotUnit(f"mean direction must be unit norm, got {np.linalg.norm(mu)}")
        if not self.kappa >= 0:
            raise VmfError("kappa must be nonnegative")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def m(self) -> int:
        return self.mu.size


# -- log I_v(x) ------------------------------------------------------------

DEBYE_TERMS = 12
DEBYE_MIN_ORDER = 15.0


@lru_cache(maxsize=1)
def _debye_polys():
    """u_k(t) of the uniform (Debye) expansion, from the standard recurrence
    u_{k+1} = t^2 (1 - t^2) u_k' / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds."""
    t = Polynomial([0, 1])
    polys = [Polynomial([1.0])]
    for _ in range(DEBYE_TERMS):
        u = polys[-1]
        a = 0.5 * t**2 * (1 - t**2) * u.deriv()
        b = (0.125 * (1 - 5 * t**2) * u).integ()
        polys.append(a + b)
    return polys


def _log_series(v: float, x: float) -> float:
    kmax = int(x + 4 * math.sqrt(x + 1) + 60)
    k = np.arange(kmax, dtype=float)
    logs = 2 * k * math.log(x / 2) - gammaln(k + 1) - gammaln(v + k + 1)
    top = logs.max()
    return v * math.log(x / 2) + top + math.log(np.exp(logs - top).sum())


def _log_hankel(v: float, x: float) -> float:
    mu = 4 * v * v
    total, term = 1.0, 1.0
    prev = math.inf
    for k in range(1, int(2 * x) + 2):
        term *= -(mu - (2 * k - 1) ** 2) / (8 * k * x)
        if term == 0.0 or (k > v + 1 and abs(term) > prev):
            break
        total += term
        prev = abs(term)
        if prev < 1e-17 * abs(total):
            break
    return x - 0.5 * math.log(2 * math.pi * x) + math.log(total)


def _log_debye(v: float, x: float) -> float:
    z = x / v
    r = math.sqrt(1 + z * z)
    t = 1 / r
    eta = r + math.log(z / (1 + r))
    s = sum(u(t) / v**k for k, u in enumerate(_debye_polys()))
    return v * eta - 0.5 * math.log(2 * math.pi * v) - 0.5 * math.log(r) + math.log(s)


def log_bessel_i(v: float, x: float) -> float:
    """log of the modified Bessel function of the first kind, ``log I_v(x)``.

    Power series for ``x <= max(30, 2v)``; beyond that the large-argument
    Hankel expansion for low orders and the uniform Debye expansion for
    orders of at least ``DEBYE_MIN_ORDER``.
    """
    v, x = float(v), float(x)
    if v < 0 or x < 0:
        raise ValueError("log_bessel_i requires v >= 0 and x >= 0")
    if x == 0.0:
        return 0.0 if v == 0.0 else -math.inf
    if x <= max(30.0, 2 * v):
        return _log_series(v, x)
    if v >= DEBYE_MIN_ORDER:
        return _log_debye(v, x)
    return _log_hankel(v, x)


def log_sphere_area(m: int) -> float:
    """log of the surface area of S^{m-1}: 2 pi^{m/2} / Gamma(m/2)."""
    return math.log(2) + 0.5 * m * math.log(math.pi) - math.lgamma(0.5 * m)


def log_normalizer(m: int, kappa: float) -> float:
    """log C_m(kappa); at kappa = 0 the uniform density."""
    if kappa == 0:
        return -log_sphere_area(m)
    nu = 0.5 * m - 1
    return nu * math.log(kappa) - 0.5 * m * math.log(2 * math.pi) - log_bessel_i(nu, kappa)


def log_density(z, p: VmfParams) -> float:
    z = np.asarray(z, dtype=float)
    if abs(np.linalg.norm(z) - 1.0) > 1e-6:
        raise NotUnit("z must lie on the unit sphere")
    return p.kappa * float(p.mu @ z) + log_normalizer(p.m, p.kappa)


def log_density_batch(Z: np.ndarray, p: VmfParams) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if np.any(np.abs(np.linalg.norm(Z, axis=1) - 1.0) > 1e-6):
        raise NotUnit("every row of Z must lie on the unit sphere")
    return p.kappa * (Z @ p.mu) + log_normalizer(p.m, p.kappa)


def mean_resultant_length(m: int, kappa: float) -> float:
    """A_m(kappa) = I_{m/2}(kappa) / I_{m/2-1}(kappa) = E[mu^T z]."""
    if kappa == 0:
        return 0.0
    return math.exp(log_bessel_i(0.5 * m, kappa) - log_bessel_i(0.5 * m - 1, kappa))


def kl_to_uniform(m: int, kappa: float) -> float:
    """KL(vMF(mu, kappa) || uniform on S^{m-1}); does not depend on mu."""
    if kappa == 0:
        return 0.0
    return kappa * mean_resultant_length(m, kappa) + log_normalizer(m, kappa) + log_sphere_area(m)


# -- sampling --------------------------------------------------------------


def sample_w(m: int, kappa: float, rng: np.random.Generator, size: int | None = None):
    """Draw ``w = mu^T z`` with density proportional to
    ``exp(kappa w) (1 - w^2)^{(m-3)/2}`` on [-1, 1].

    Wood (1994) envelope rejection; ``kappa == 0`` draws the Beta marginal
    directly.
    """
    if m < 2 or kappa < 0:
        raise VmfError("sample_w requires m >= 2 and kappa >= 0")
    n = 1 if size is None else int(size)
    a = 0.5 * (m - 1)
    if kappa == 0:
        w = 1 - 2 * rng.beta(a, a, size=n)
        return float(w[0]) if size is None else w
    d = m - 1
    b = d / (2 * kappa + math.sqrt(4 * kappa**2 + d**2))
    x0 = (1 - b) / (1 + b)
    c = kappa * x0 + d * math.log(1 - x0**2)
    out = np.empty(n)
    todo = np.arange(n)
    misses = 0
    while todo.size:
        Z = rng.beta(a, a, size=todo.size)
        W = (1 - (1 + b) * Z) / (1 - (1 - b) * Z)
        U = rng.uniform(size=todo.size)
        ok = kappa * W + d * np.log1p(-x0 * W) - c >= np.log(U)
        out[todo[ok]] = W[ok]
        todo = todo[~ok]
        misses = misses + 1 if not ok.any() else 0
        if misses >= MAX_REJECTIONS:
            raise NonConvergence("vMF rejection sampler failed to accept a proposal")
    return float(out[0]) if size is None else out


def sample_tangent(mu, rng: np.random.Generator, size: int | None = None, max_tries: int = 100):
    """Uniform unit vector(s) orthogonal to ``mu``."""
    mu = np.asarray(mu, dtype=float)
    n = 1 if size is None else int(size)
    out = np.empty((n, mu.size))
    todo = np.arange(n)
    for _ in range(max_tries):
        g = rng.standard_normal((todo.size, mu.size))
        g -= np.outer(g @ mu, mu)
        nrm = np.linalg.norm(g, axis=1)
        ok = nrm > 1e-8
        v = g[ok] / nrm[ok, None]
        # one more projection removes the rounding left by the first
        v -= np.outer(v @ mu, mu)
        out[todo[ok]] = v / np.linalg.norm(v, axis=1, keepdims=True)
        todo = todo[~ok]
        if not todo.size:
            return out[0] if size is None else out
    raise NonConvergence("could not draw a tangent vector")


def sample(p: VmfParams, rng: np.random.Generator, size: int | None = None):
    """``z = w mu + sqrt(1 - w^2) v`` with ``w`` from :func:`sample_w` and
    ``v`` a uniform tangent direction at ``mu``."""
    n = 1 if size is None else int(size)
    w = sample_w(p.m, p.kappa, rng, size=n)
    v = sample_tangent(p.mu, rng, size=n)
    z = w[:, None] * p.mu[None, :] + np.sqrt(np.clip(1 - w * w, 0.0, None))[:, None] * v
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z[0] if size is None else z


def sample_uniform_sphere(m: int, rng: np.random.Generator, size: int) -> np.ndarray:
    g = rng.standard_normal((size, m))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
