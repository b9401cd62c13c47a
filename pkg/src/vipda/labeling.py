"""Non-parametric pseudo-labeling and class-importance weighting.

Pipeline, run on deterministic (posterior-mean) latents:

1. per-class source cluster centers;
2. similarity of each latent to every center, via base-2 Jensen-Shannon
   divergence after mapping both through softmax onto the simplex
   (entry = (2 - JS)/2, which lands in [0.5, 1]);
3. soft pseudo-labels = softmax over similarities, hard label = argmax;
4. confidence threshold T = mean source max-probability;
5. confident target subset (max probability >= T, input order kept);
6. class-importance weights W = mean confident soft label, normalized so
   max(W) = 1; all-ones fallback when no target is confident.

Everything here is pure; a produced LabelingState is immutable in practice
and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import js_divergence, softmax


@dataclass(frozen=True)
class CenterBank:
    """Per-class source cluster centers and the sample counts behind them."""

    centers: np.ndarray  # (n_classes, latent_dim)
    counts: np.ndarray  # (n_classes,)


@dataclass(frozen=True)
class LabelingState:
    """Snapshot of the pseudo-labeling pipeline used by one training phase."""

    threshold: float
    conf_indices: np.ndarray  # target indices in the confident set, input order
    conf_labels: np.ndarray  # pseudo-labels of the confident set
    conf_probs: np.ndarray  # (n_confident, n_classes) soft labels
    class_weights: np.ndarray  # (n_classes,), max 1 unless all-ones fallback

    @property
    def n_confident(self) -> int:
        return len(self.conf_indices)


def initial_labeling_state(n_classes: int) -> LabelingState:
    """State used before the first re-estimation: all-ones W, nothing confident."""
    return LabelingState(
        threshold=1.0,
        conf_indices=np.zeros(0, dtype=np.int64),
        conf_labels=np.zeros(0, dtype=np.int64),
        conf_probs=np.zeros((0, n_classes)),
        class_weights=np.ones(n_classes),
    )


def labeling_record(epoch: int, state: LabelingState) -> str:
    """One diagnostics line per re-estimation."""
    weights = ",".join(repr(float(w)) for w in state.class_weights)
    return (
        f"epoch={epoch} T={state.threshold!r} "
        f"n_confident={state.n_confident} W={weights}"
    )


def class_centers(latents, labels, n_classes: int) -> CenterBank:
    """Mean latent per class; every class must be present."""
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    centers = np.zeros((n_classes, latents.shape[1]))
    counts = np.zeros(n_classes, dtype=np.int64)
    for c in range(n_classes):
        members = latents[labels == c]
        if len(members) == 0:
            raise ValueError(f"no source samples for class {c}")
        centers[c] = members.mean(axis=0)
        counts[c] = len(members)
    return CenterBank(centers=centers, counts=counts)


def similarity(z, bank: CenterBank) -> np.ndarray:
    """Similarity of one latent to every class center, each in [0.5, 1].

    Both the latent and the centers are softmax-normalized onto the simplex
    before the divergence; a value of 1 means the normalized vectors coincide.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != bank.centers.shape[1:]:
        raise ValueError(
            f"latent shape {z.shape} does not match centers {bank.centers.shape}"
        )
    p = softmax(z)
    out = np.empty(len(bank.centers))
    for c, center in enumerate(bank.centers):
        out[c] = (2.0 - js_divergence(p, softmax(center))) / 2.0
    return out


def _js_rows(p_rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    # vectorized base-2 JS of each row of p_rows against one vector q;
    # softmax outputs are strictly positive, so no 0*log(0) guard is needed
    m = 0.5 * (p_rows + q)
    kl_p = np.sum(p_rows * np.log2(p_rows / m), axis=1)
    kl_q = np.sum(q * np.log2(q / m), axis=1)
    return 0.5 * (kl_p + kl_q)


def similarity_matrix(latents, bank: CenterBank) -> np.ndarray:
    """Row-wise :func:`similarity` for a batch of latents."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[1:] != bank.centers.shape[1:]:
        raise ValueError(
            f"latent shape {latents.shape} does not match centers {bank.centers.shape}"
        )
    p_rows = softmax(latents)
    out = np.empty((len(latents), len(bank.centers)))
    for c, center in enumerate(bank.centers):
        out[:, c] = (2.0 - _js_rows(p_rows, softmax(center))) / 2.0
    return out


def pseudo_label(sim):
    """Soft label = softmax over similarities; hard label = argmax.

    Ties resolve to the lowest class index (argmax convention), which keeps
    the pipeline reproducible.
    """
    probs = softmax(sim)
    return probs, int(np.argmax(probs))


def confidence_threshold(src_sims) -> float:
    """Mean over source samples of the max soft-label probability."""
    src_sims = np.asarray(src_sims, dtype=np.float64)
    if len(src_sims) == 0:
        raise ValueError("confidence threshold needs a nonempty source set")
    return float(np.mean(softmax(src_sims).max(axis=1)))


def confident_targets(tgt_probs, tgt_labels, threshold: float):
    """Indices (input order), labels and soft labels of targets with
    max probability >= threshold."""
    tgt_probs = np.asarray(tgt_probs, dtype=np.float64)
    tgt_labels = np.asarray(tgt_labels, dtype=np.int64)
    keep = np.flatnonzero(tgt_probs.max(axis=1) >= threshold)
    return keep, tgt_labels[keep], tgt_probs[keep]


def class_weights(conf_probs, n_classes: int) -> np.ndarray:
    """Mean confident soft label, normalized to max 1; all-ones if empty."""
    conf_probs = np.asarray(conf_probs, dtype=np.float64)
    if conf_probs.size == 0:
        return np.ones(n_classes)
    raw = conf_probs.mean(axis=0)
    return raw / raw.max()


def estimate_labeling(src_latents, src_labels, tgt_latents, n_classes: int) -> LabelingState:
    """Run the full pipeline on precomputed (posterior-mean) latents."""
    bank = class_centers(src_latents, src_labels, n_classes)
    src_sims = similarity_matrix(src_latents, bank)
    threshold = confidence_threshold(src_sims)
    tgt_sims = similarity_matrix(tgt_latents, bank)
    tgt_probs = softmax(tgt_sims)
    tgt_labels = np.argmax(tgt_probs, axis=1)
    keep, labels, probs = confident_targets(tgt_probs, tgt_labels, threshold)
    return LabelingState(
        threshold=threshold,
        conf_indices=keep,
        conf_labels=labels,
        conf_probs=probs,
        class_weights=class_weights(probs, n_classes),
    )
