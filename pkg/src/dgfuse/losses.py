"""The training objective: activity cross-entropy, per-domain classifier
cross-entropy, and a cross-domain alignment term on the branch features,
combined as  total = l_cls + lam * l_dsr + beta * l_dir."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import distances
from .data import UNKNOWN_DOMAIN
from .model import ModelConfig, ModelParams, backward, forward


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_dsr: float
    l_dir: float
    total: float

    @property
    def finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.l_cls, self.l_dsr, self.l_dir, self.total))


def classification_loss(probs, labels):
    """Mean negative log-probability of the true class over the pooled batch.
    Probabilities are clamped at 1e-12 before the log (clamped entries pass
    no gradient). Returns (value, grad w.r.t. probs)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    p_true = probs[np.arange(n), labels]
    clamped = np.maximum(p_true, 1e-12)
    value = float(-np.log(clamped).mean())
    d_probs = np.zeros_like(probs)
    live = p_true >= 1e-12
    d_probs[np.arange(n)[live], labels[live]] = -1.0 / (n * clamped[live])
    return value, d_probs


def domain_specific_loss(domain_logits, domain_idx, num_domains: int):
    """Cross-entropy of the domain classifier, averaged per domain first and
    then over the domains (each domain counts equally regardless of batch
    composition). Returns (value, grad w.r.t. logits)."""
    logits = np.asarray(domain_logits, dtype=np.float64)
    domain_idx = np.asarray(domain_idx, dtype=np.int64)
    n, k = logits.shape
    if k != num_domains:
        raise ValueError(f"{k} logits for {num_domains} domains")
    if domain_idx.shape != (n,):
        raise ValueError("one domain index per row required")
    if np.any(domain_idx == UNKNOWN_DOMAIN):
        raise ValueError("training batch contains windows with unknown domain")
    if domain_idx.min() < 0 or domain_idx.max() >= num_domains:
        raise ValueError(f"domain index out of range [0, {num_domains})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    value = 0.0
    d_logits = np.zeros_like(logits)
    for dom in range(num_domains):
        rows = np.flatnonzero(domain_idx == dom)
        if rows.size == 0:
            raise ValueError(f"domain {dom} missing from the batch")
        value += -log_probs[rows, dom].mean()
        coeff = 1.0 / (rows.size * num_domains)
        d_logits[rows] += coeff * probs[rows]
        d_logits[rows, dom] -= coeff
    return value / num_domains, d_logits


def domain_invariant_loss(branch_feats, domain_slices, kind: str = "mmd",
                          kernel: distances.KernelSpec | None = None,
                          discriminators: dict | None = None):
    """Alignment term: average pair distance between the branch-embedded
    sub-batches, each domain embedded by its own branch.

    ``branch_feats`` is the (K, n, d) stack from the forward pass and
    ``domain_slices[k]`` indexes domain k's rows of the batch. Returns
    (value, gradient w.r.t. branch_feats, discriminator gradients or None).
    """
    kernel = kernel or distances.KernelSpec()
    k = len(domain_slices)
    if k < 2:
        raise ValueError("alignment needs at least 2 domains")
    feats = [np.asarray(branch_feats[i][domain_slices[i]]) for i in range(k)]
    d_branch = np.zeros_like(branch_feats)
    disc_grads: dict | None = {} if kind == "adversarial" else None
    pairs = list(itertools.combinations(range(k), 2))
    total = 0.0
    for i, j in pairs:
        if kind == "mmd":
            value, gi, gj = distances.mmd_squared(feats[i], feats[j], kernel)
        elif kind == "coral":
            if len(feats[i]) < 2 or len(feats[j]) < 2:
                raise ValueError("coral needs sub-batches of at least 2 samples")
            value, gi, gj = distances.coral_loss(feats[i], feats[j])
        elif kind == "adversarial":
            if discriminators is None or (i, j) not in discriminators:
                raise ValueError(f"no discriminator for domain pair ({i}, {j})")
            value, gi, gj, gd = distances.pairwise_adversarial_loss(
                feats[i], feats[j], discriminators[(i, j)]
            )
            disc_grads[(i, j)] = gd
        else:
            raise ValueError(f"unknown distance kind {kind!r}")
        total += value
        d_branch[i, domain_slices[i]] += gi / len(pairs)
        d_branch[j, domain_slices[j]] += gj / len(pairs)
    if disc_grads is not None:
        for g in disc_grads.values():
            for _, arr in g.arrays():
                arr /= len(pairs)
    return total / len(pairs), d_branch, disc_grads


def total_loss(x, labels, domain_idx, params: ModelParams, cfg: ModelConfig,
               lam: float, beta: float, kind: str = "mmd",
               kernel: distances.KernelSpec | None = None,
               discriminators: dict | None = None,
               fusion_teacher: bool = False):
    """One forward pass over the pooled batch, the three loss terms, and one
    backward pass. Component values are computed only for terms with a
    positive coefficient (the others are reported as 0 and add nothing).

    Returns (LossBreakdown, parameter gradients, discriminator gradients).
    """
    domain_idx = np.asarray(domain_idx, dtype=np.int64)
    override = None
    if fusion_teacher:
        override = np.zeros((len(domain_idx), cfg.num_domains))
        override[np.arange(len(domain_idx)), domain_idx] = 1.0
    trace = forward(x, params, cfg, mode="train", weight_override=override)

    l_cls, d_probs = classification_loss(trace.probs, labels)

    l_dsr = 0.0
    d_dom_logits = None
    if lam > 0.0:
        l_dsr, d_dsr = domain_specific_loss(trace.domain_logits, domain_idx, cfg.num_domains)
        d_dom_logits = lam * d_dsr

    l_dir = 0.0
    d_branch = None
    disc_grads = None
    if beta > 0.0:
        slices = [np.flatnonzero(domain_idx == k) for k in range(cfg.num_domains)]
        l_dir, d_dir, disc_grads = domain_invariant_loss(
            trace.branch_feats, slices, kind, kernel, discriminators
        )
        d_branch = beta * d_dir
        if disc_grads is not None:
            for g in disc_grads.values():
                for _, arr in g.arrays():
                    arr *= beta

    grads = backward(trace, params, cfg, d_probs=d_probs,
                     d_domain_logits=d_dom_logits, d_branch_feats=d_branch)
    breakdown = LossBreakdown(
        l_cls=l_cls, l_dsr=l_dsr, l_dir=l_dir,
        total=l_cls + lam * l_dsr + beta * l_dir,
    )
    return breakdown, grads, disc_grads
