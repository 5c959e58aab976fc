"""Observation models for sequential change diagnosis.

A model consists of a completely specified pre-change density and a finite
set of candidate post-change densities on a common observation space.
Observations are i.i.d. vectors (scalars are treated as 1-dimensional).
Every density carries both a vectorized log-density and a sampler so that
log-likelihood ratios and Monte Carlo estimates are available for arbitrary
user-supplied distributions, with closed forms used for the Gaussian
benchmark constructions.

Alternative indices in the public API are 1-based (i in 1..K), matching the
reporting convention used throughout the toolkit; internal arrays are
0-based.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "Density",
    "ChangeModel",
    "KLTable",
    "gaussian_density",
    "gaussian_mean_shift",
    "multichannel",
    "llr_vs_f",
    "llr_pair",
    "llr_matrix",
    "kl_table",
]


class ModelError(ValueError):
    """Invalid model configuration or observation outside the model support."""


@dataclass(frozen=True)
class Density:
    """A probability density paired with a sampler for the same distribution.

    ``log_density`` maps a batch of observations, shape ``(m, dim)``, to log
    densities in nats, shape ``(m,)``.  ``sampler`` maps ``(rng, m)`` to a
    batch of draws, shape ``(m, dim)``.  No automatic inversion is attempted:
    user-defined models must supply both, and agreement between the two is
    checked statistically (Monte Carlo means of log-likelihood ratios against
    divergence values) rather than symbolically.

    ``gaussian_mean`` is set by the Gaussian constructors and enables
    closed-form Kullback-Leibler divergences; leave it ``None`` for anything
    that is not an independent unit-variance Gaussian vector.
    """

    log_density: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    dim: int = 1
    gaussian_mean: np.ndarray | None = None
    label: str = ""


@dataclass(frozen=True)
class ChangeModel:
    """Pre-change density plus the ordered list of post-change alternatives.

    Immutable after construction and safe to share across parallel workers;
    all randomness flows through explicit generator arguments.
    """

    f: Density
    alternatives: tuple[Density, ...]
    symmetric_pair: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        if len(self.alternatives) < 1:
            raise ModelError("a change model needs at least one post-change alternative")
        dims = {self.f.dim} | {g.dim for g in self.alternatives}
        if len(dims) != 1:
            raise ModelError(f"densities live on different observation spaces: dims {sorted(dims)}")

    @property
    def num_alternatives(self) -> int:
        return len(self.alternatives)

    @property
    def dim(self) -> int:
        return self.f.dim


@dataclass(frozen=True)
class KLTable:
    """Kullback-Leibler divergence numbers of a change model, in nats.

    ``vs_pre[i-1]`` is the divergence of alternative ``i`` from the
    pre-change density; ``pairwise[i-1, j-1]`` the divergence of alternative
    ``i`` from alternative ``j`` (diagonal unused, stored as nan);
    ``pairwise_min[i-1]`` the minimum of ``pairwise[i-1]`` over rivals.
    Standard errors are zero where a closed form was used.
    """

    vs_pre: np.ndarray
    pairwise: np.ndarray
    pairwise_min: np.ndarray
    vs_pre_se: np.ndarray
    pairwise_se: np.ndarray


def _as_batch(x, dim: int) -> np.ndarray:
    """Coerce a single observation or a batch into shape ``(m, dim)``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # A length-dim vector is one observation; for dim == 1 it is a batch.
        arr = arr.reshape(1, dim) if (dim > 1 and arr.shape[0] == dim) else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ModelError(f"observation of shape {np.shape(x)} does not fit observation space of dimension {dim}")
    return arr


def gaussian_density(mean, label: str = "") -> Density:
    """Independent unit-variance Gaussian vector with the given mean(s)."""
    mu = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    d = mu.shape[0]
    const = -0.5 * d * np.log(2.0 * np.pi)

    def log_density(x: np.ndarray) -> np.ndarray:
        xb = _as_batch(x, d)
        return const - 0.5 * np.sum((xb - mu) ** 2, axis=1)

    def sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.normal(size=(m, d)) + mu

    return Density(log_density, sampler, dim=d, gaussian_mean=mu, label=label)


def gaussian_mean_shift(thetas: Sequence[float]) -> ChangeModel:
    """Scalar Gaussian model: pre-change N(0,1), alternative i is N(theta_i, 1).

    Means must be strictly positive.  An unordered list is accepted with a
    warning; ordering is a presentation convention, no statistic depends
    on it.
    """
    th = [float(t) for t in thetas]
    if not th:
        raise ModelError("gaussian_mean_shift: empty list of post-change means")
    if any(t <= 0.0 for t in th):
        raise ModelError("gaussian_mean_shift: post-change means must be strictly positive")
    if th != sorted(th):
        warnings.warn("gaussian_mean_shift: post-change means are not increasing", stacklevel=2)
    f = gaussian_density(0.0, label="N(0,1)")
    alts = tuple(gaussian_density(t, label=f"N({t:g},1)") for t in th)
    return ChangeModel(f=f, alternatives=alts)


def _product_density(channels: Sequence[Density], label: str) -> Density:
    """Joint density of independent per-channel components."""
    chans = tuple(channels)
    d = len(chans)
    if any(c.dim != 1 for c in chans):
        raise ModelError("multichannel components must be 1-dimensional densities")

    def log_density(x: np.ndarray) -> np.ndarray:
        xb = _as_batch(x, d)
        out = np.zeros(xb.shape[0])
        for c, comp in enumerate(chans):
            out += comp.log_density(xb[:, c : c + 1])
        return out

    def sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        return np.hstack([comp.sampler(rng, m) for comp in chans])

    mean = None
    if all(c.gaussian_mean is not None for c in chans):
        mean = np.concatenate([c.gaussian_mean for c in chans])
    return Density(log_density, sampler, dim=d, gaussian_mean=mean, label=label)


def multichannel(
    d: int,
    pre: Sequence[Density],
    post: Sequence[Density],
    simultaneous: bool = False,
) -> ChangeModel:
    """Multichannel model: d independent channels, each with its own pre- and
    post-change marginal.

    In single-fault mode the change affects exactly one channel, giving K = d
    alternatives.  In simultaneous mode (supported for d = 2) a third
    alternative with both channels affected is added, giving K = 3.
    """
    if d < 1:
        raise ModelError("multichannel: need at least one channel")
    if len(pre) != d or len(post) != d:
        raise ModelError(f"multichannel: expected {d} pre and post densities, got {len(pre)} and {len(post)}")
    if simultaneous and d != 2:
        raise ModelError("multichannel: simultaneous faults are supported for d=2 only")

    f = _product_density(pre, label="all channels nominal")
    alts = []
    for i in range(d):
        comps = list(pre)
        comps[i] = post[i]
        alts.append(_product_density(comps, label=f"fault in channel {i + 1}"))
    if simultaneous:
        alts.append(_product_density(list(post), label="fault in both channels"))

    sym = None
    if d == 2 and _same_marginals(pre[0], pre[1]) and _same_marginals(post[0], post[1]):
        sym = (1, 2)
    return ChangeModel(f=f, alternatives=tuple(alts), symmetric_pair=sym)


def _same_marginals(a: Density, b: Density) -> bool:
    if a.gaussian_mean is None or b.gaussian_mean is None:
        return False
    return bool(np.array_equal(a.gaussian_mean, b.gaussian_mean))


def llr_matrix(model: ChangeModel, x) -> np.ndarray:
    """Log-likelihood ratios of every alternative against the pre-change
    density, for a batch of observations.  Shape ``(m, K)``.

    Raises :class:`ModelError` if any ratio is non-finite, which indicates an
    observation outside the support of one of the densities.
    """
    xb = _as_batch(x, model.dim)
    logf = model.f.log_density(xb)
    out = np.empty((xb.shape[0], model.num_alternatives))
    for k, g in enumerate(model.alternatives):
        out[:, k] = g.log_density(xb) - logf
    if not np.all(np.isfinite(out)):
        raise ModelError("non-finite log-likelihood ratio: observation outside model support")
    return out


def _check_index(model: ChangeModel, i: int, name: str = "i") -> None:
    if not 1 <= i <= model.num_alternatives:
        raise ModelError(f"alternative index {name}={i} outside 1..{model.num_alternatives}")


def llr_vs_f(model: ChangeModel, i: int, x) -> float:
    """log g_i(x) - log f(x) for a single observation (i is 1-based)."""
    _check_index(model, i)
    xb = _as_batch(x, model.dim)
    val = float(model.alternatives[i - 1].log_density(xb)[0] - model.f.log_density(xb)[0])
    if not np.isfinite(val):
        raise ModelError("non-finite log-likelihood ratio: observation outside model support")
    return val


def llr_pair(model: ChangeModel, i: int, j: int, x) -> float:
    """log g_i(x) - log g_j(x); equals llr_vs_f(i,x) - llr_vs_f(j,x) exactly."""
    if i == j:
        raise ModelError("llr_pair requires distinct alternatives")
    _check_index(model, i)
    _check_index(model, j, "j")
    return llr_vs_f(model, i, x) - llr_vs_f(model, j, x)


_MC_KL_SAMPLES = 100_000


def _divergence(p: Density, q: Density, rng: np.random.Generator) -> tuple[float, float]:
    """Div(p || q) with standard error; closed form for Gaussian pairs."""
    if p.gaussian_mean is not None and q.gaussian_mean is not None:
        return 0.5 * float(np.sum((p.gaussian_mean - q.gaussian_mean) ** 2)), 0.0
    draws = p.sampler(rng, _MC_KL_SAMPLES)
    vals = p.log_density(draws) - q.log_density(draws)
    if not np.all(np.isfinite(vals)):
        raise ModelError("non-finite log ratio while estimating a divergence")
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def kl_table(model: ChangeModel, rng: np.random.Generator | None = None) -> KLTable:
    """Divergence numbers of the model; the model is rejected if any required
    number is non-positive or non-finite.

    Gaussian components use the closed form; anything else falls back to a
    Monte Carlo estimate with 1e5 samples and a reported standard error.  The
    default generator is fixed so that repeated calls agree.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    K = model.num_alternatives
    vs_pre = np.empty(K)
    vs_pre_se = np.empty(K)
    pairwise = np.full((K, K), np.nan)
    pairwise_se = np.zeros((K, K))
    for a in range(K):
        vs_pre[a], vs_pre_se[a] = _divergence(model.alternatives[a], model.f, rng)
        for b in range(K):
            if a != b:
                pairwise[a, b], pairwise_se[a, b] = _divergence(
                    model.alternatives[a], model.alternatives[b], rng
                )
    off = pairwise[~np.eye(K, dtype=bool)] if K > 1 else np.array([1.0])
    numbers = np.concatenate([vs_pre, off])
    if not np.all(np.isfinite(numbers)) or np.any(numbers <= 0.0):
        raise ModelError("model rejected: all divergence numbers must be positive and finite")
    if K > 1:
        masked = np.where(np.eye(K, dtype=bool), np.inf, pairwise)
        pairwise_min = masked.min(axis=1)
    else:
        pairwise_min = np.array([np.inf])
    return KLTable(vs_pre, pairwise, pairwise_min, vs_pre_se, pairwise_se)
