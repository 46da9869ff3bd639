"""Empirical distribution distances between feature batches, with exact
gradients with respect to the batches: multi-bandwidth Gaussian-kernel MMD,
CORAL (covariance alignment), and a DANN-style pairwise discriminator loss.

A feature batch is a float64 matrix of shape (n, d): n samples, d feature
dimensions. All functions are pure; the discriminator variant additionally
returns sign-reversed parameter gradients so one descent step trains the
discriminator against the features (gradient reversal).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MEDIAN_HEURISTIC = "median"


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel family. ``bandwidths`` is either an explicit tuple of
    positive sigmas or MEDIAN_HEURISTIC, which sets the base sigma to the
    median pairwise distance of the pooled batch (held constant, no gradient
    through it) and spreads it by ``multipliers``."""

    kind: str = "gaussian"
    bandwidths: tuple[float, ...] | str = MEDIAN_HEURISTIC
    multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if self.bandwidths != MEDIAN_HEURISTIC:
            bw = tuple(float(b) for b in self.bandwidths)
            if not bw or any(b <= 0 for b in bw):
                raise ValueError("bandwidths must be positive")
            object.__setattr__(self, "bandwidths", bw)
        if not self.multipliers or any(m <= 0 for m in self.multipliers):
            raise ValueError("multipliers must be positive")


def as_feature_batch(x, name: str = "batch") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (n, d) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def _sqdist(a, b):
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def resolve_bandwidths(a, b, spec: KernelSpec) -> np.ndarray:
    """Concrete sigma set for a pair of batches (constant w.r.t. inputs)."""
    if spec.bandwidths != MEDIAN_HEURISTIC:
        return np.asarray(spec.bandwidths)
    pooled = np.vstack([a, b])
    d = np.sqrt(_sqdist(pooled, pooled))
    iu = np.triu_indices(len(pooled), k=1)
    base = float(np.median(d[iu])) if iu[0].size else 0.0
    if base <= 0.0:
        base = 1.0
    return base * np.asarray(spec.multipliers)


def _kernel_terms(a, b, sigmas):
    """Averaged kernel matrix K and the companion matrix R = mean_s k_s/s^2
    that drives d k / d (inputs)."""
    d2 = _sqdist(a, b)
    k = np.zeros_like(d2)
    r = np.zeros_like(d2)
    for s in sigmas:
        e = np.exp(-d2 / (2.0 * s * s))
        k += e
        r += e / (s * s)
    return k / len(sigmas), r / len(sigmas)


def gaussian_kernel_matrix(a, b, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """Entry (p, q) = mean over bandwidths of exp(-|a_p - b_q|^2 / (2 s^2))."""
    a = as_feature_batch(a, "A")
    b = as_feature_batch(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    sigmas = resolve_bandwidths(a, b, spec)
    k, _ = _kernel_terms(a, b, sigmas)
    return k


def mmd_squared(a, b, spec: KernelSpec = KernelSpec()):
    """Biased V-statistic of squared MMD: mean(K_aa) - 2 mean(K_ab) + mean(K_bb).

    Returns (value, grad_a, grad_b). The value is clamped at zero (it is
    non-negative up to roundoff); gradients are exact for the resolved
    bandwidths, which are treated as constants.
    """
    a = as_feature_batch(a, "A")
    b = as_feature_batch(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    na, nb = len(a), len(b)
    sigmas = resolve_bandwidths(a, b, spec)
    k_aa, r_aa = _kernel_terms(a, a, sigmas)
    k_bb, r_bb = _kernel_terms(b, b, sigmas)
    k_ab, r_ab = _kernel_terms(a, b, sigmas)
    value = float(k_aa.mean() - 2.0 * k_ab.mean() + k_bb.mean())
    # d/dx of sum c_pq k(x_p, y_q) = c [R @ y - rowsum(R) x], doubled when
    # both kernel arguments are the same batch.
    grad_a = (2.0 / na**2) * (r_aa @ a - r_aa.sum(axis=1)[:, None] * a)
    grad_a -= (2.0 / (na * nb)) * (r_ab @ b - r_ab.sum(axis=1)[:, None] * a)
    grad_b = (2.0 / nb**2) * (r_bb @ b - r_bb.sum(axis=1)[:, None] * b)
    grad_b -= (2.0 / (na * nb)) * (r_ab.T @ a - r_ab.sum(axis=0)[:, None] * b)
    return max(value, 0.0), grad_a, grad_b


def coral_loss(a, b):
    """Frobenius gap between the unbiased feature covariances of two batches,
    scaled by 1/(4 d^2). Returns (value, grad_a, grad_b)."""
    a = as_feature_batch(a, "A")
    b = as_feature_batch(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("covariance needs at least 2 samples per batch")
    d = a.shape[1]
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    cov_a = ac.T @ ac / (len(a) - 1)
    cov_b = bc.T @ bc / (len(b) - 1)
    diff = cov_a - cov_b
    value = float(np.sum(diff * diff) / (4.0 * d * d))
    grad_a = ac @ diff / (d * d * (len(a) - 1))
    grad_b = -(bc @ diff) / (d * d * (len(b) - 1))
    return value, grad_a, grad_b


@dataclass(eq=False)
class DiscriminatorParams:
    """Two-layer feed-forward domain discriminator mapping features to the
    probability that a sample came from the first domain of its pair."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, dim: int, hidden: int = 16, rng=None) -> "DiscriminatorParams":
        rng = np.random.default_rng(rng)
        lim1 = np.sqrt(6.0 / (dim + hidden))
        lim2 = np.sqrt(6.0 / (hidden + 1))
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, size=(hidden, 1)),
            b2=np.zeros(1),
        )

    def arrays(self):
        return (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))

    def zeros_like(self) -> "DiscriminatorParams":
        return DiscriminatorParams(*(np.zeros_like(v) for _, v in self.arrays()))


def discriminator_prob(disc: DiscriminatorParams, x) -> np.ndarray:
    x = as_feature_batch(x, "batch")
    h = np.maximum(x @ disc.w1 + disc.b1, 0.0)
    z = (h @ disc.w2 + disc.b2)[:, 0]
    return 1.0 / (1.0 + np.exp(-z))


_PROB_CLAMP = 1e-7


def _disc_backward(disc, x, h, p, dp):
    """Backprop dp (grad w.r.t. sigmoid output) through the discriminator.
    Returns (grad_x, grads-on-parameters)."""
    dz = dp * p * (1.0 - p)
    dh = dz[:, None] @ disc.w2.T
    dh[h <= 0.0] = 0.0
    g = DiscriminatorParams(
        w1=x.T @ dh,
        b1=dh.sum(axis=0),
        w2=h.T @ dz[:, None],
        b2=np.array([dz.sum()]),
    )
    return dh @ disc.w1.T, g


def pairwise_adversarial_loss(a, b, disc: DiscriminatorParams):
    """Discriminator objective for one domain pair:
    mean log D(a) + mean log(1 - D(b)), probabilities clamped away from
    {0, 1} before the log.

    Returns (value, grad_a, grad_b, disc_grads). grad_a/grad_b are gradients
    of the value, so descending them drives the features toward
    indistinguishability; disc_grads come back sign-reversed (gradient
    reversal), so descending them improves the discriminator.
    """
    a = as_feature_batch(a, "A")
    b = as_feature_batch(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    ha = np.maximum(a @ disc.w1 + disc.b1, 0.0)
    pa = 1.0 / (1.0 + np.exp(-(ha @ disc.w2 + disc.b2)[:, 0]))
    hb = np.maximum(b @ disc.w1 + disc.b1, 0.0)
    pb = 1.0 / (1.0 + np.exp(-(hb @ disc.w2 + disc.b2)[:, 0]))
    pa_cl = np.clip(pa, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    pb_cl = np.clip(pb, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    value = float(np.log(pa_cl).mean() + np.log1p(-pb_cl).mean())
    dpa = np.where(pa == pa_cl, 1.0 / (len(a) * pa_cl), 0.0)
    dpb = np.where(pb == pb_cl, -1.0 / (len(b) * (1.0 - pb_cl)), 0.0)
    grad_a, ga = _disc_backward(disc, a, ha, pa, dpa)
    grad_b, gb = _disc_backward(disc, b, hb, pb, dpb)
    disc_grads = DiscriminatorParams(
        *(-(va + vb) for (_, va), (_, vb) in zip(ga.arrays(), gb.arrays()))
    )
    return value, grad_a, grad_b, disc_grads


def pairwise_average(loss_fn, batches) -> float:
    """Mean of a pair loss over all unordered pairs of K >= 2 batches.
    ``loss_fn`` may return the bare value or a (value, ...) tuple."""
    batches = list(batches)
    if len(batches) < 2:
        raise ValueError(f"need at least 2 batches, got {len(batches)}")
    total = 0.0
    count = 0
    for i, j in itertools.combinations(range(len(batches)), 2):
        out = loss_fn(batches[i], batches[j])
        total += out[0] if isinstance(out, tuple) else float(out)
        count += 1
    return total / count
