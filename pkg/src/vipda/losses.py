"""The five loss terms of the adaptation objective and their gradients.

Total objective: L = L_class + alpha * L_adv + beta * (L_recon + L_cda)
+ gamma * L_em. Each term has a standalone value function (used by tests and
diagnostics) and the training loop uses :func:`step_losses_and_grads`, a fused
forward/backward over one source batch and one target batch that returns every
term plus parameter gradients of the weighted total.

Conventions:

* The adversarial term is the standard domain binary cross-entropy
  -mean_s[w * log dis(f_s)] - mean_t[log(1 - dis(f_t))], computed from logits
  via softplus for stability. The discriminator descends on it directly; the
  encoder receives the reversed cotangent (gradient reversal with unit scale,
  the ramp weight is carried by the term weight).
* Per-sample reconstruction error is the plain Euclidean norm, not its square.
* Class weights w_y down-weight source samples in the class, adversarial,
  reconstruction and latent-alignment terms; the entropy term is unweighted.
* One reparameterized latent draw per sample per step, shared by all terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core_math import LOG_2PI, check_simplex
from .networks import (
    ClassPriorBank,
    NetConfig,
    grad_reverse_backward,
    mlp_backward,
    mlp_forward,
    sigmoid,
)

LOSS_LOG_HEADER = "step,lr,alpha,class_loss,adv_loss,recon_loss,cda_loss,em_loss,total"

TERM_NAMES = ("class_loss", "adv_loss", "recon_loss", "cda_loss", "em_loss")


@dataclass(frozen=True)
class LossBreakdown:
    """All loss terms (raw, unweighted) plus the weighted total for one step."""

    class_loss: float
    adv_loss: float
    recon_loss: float
    cda_loss: float
    em_loss: float
    total: float

    def as_tuple(self):
        return (
            self.class_loss,
            self.adv_loss,
            self.recon_loss,
            self.cda_loss,
            self.em_loss,
            self.total,
        )


def loss_log_line(step: int, lr: float, alpha: float, bd: LossBreakdown) -> str:
    """One comma-separated log record matching ``LOSS_LOG_HEADER``."""
    values = (lr, alpha) + bd.as_tuple()
    return f"{step}," + ",".join(repr(float(v)) for v in values)


def total_loss(parts: dict, alpha: float, beta: float, gamma: float) -> LossBreakdown:
    """Combine raw terms into the weighted objective."""
    for name in TERM_NAMES:
        value = parts[name]
        if not np.isfinite(value):
            raise ValueError(f"non-finite loss term {name}: {value}")
    if min(alpha, beta, gamma) < 0:
        raise ValueError("trade-off weights must be nonnegative")
    total = (
        parts["class_loss"]
        + alpha * parts["adv_loss"]
        + beta * (parts["recon_loss"] + parts["cda_loss"])
        + gamma * parts["em_loss"]
    )
    return LossBreakdown(total=float(total), **{k: float(parts[k]) for k in TERM_NAMES})


@dataclass(frozen=True)
class TermWeights:
    """Effective multiplier of each term inside one training step.

    The engine maps (alpha, beta, gamma) and the ablation switches onto these;
    a weight of exactly 0 skips the term entirely (value logged as 0, no
    gradient contribution).
    """

    class_w: float = 1.0
    adv_w: float = 0.0
    recon_w: float = 0.0
    cda_w: float = 0.0
    em_w: float = 0.0


@dataclass
class StepBatch:
    """One optimization step's inputs.

    ``tgt_conf_mask`` marks which target rows are in the confident pseudo-label
    set; ``tgt_conf_y`` holds their pseudo-labels (entries outside the mask are
    ignored). ``eps_*`` are the standard-normal draws for the reparameterized
    latent sample of each row.
    """

    src_x: np.ndarray
    src_y: np.ndarray
    tgt_x: np.ndarray
    tgt_conf_mask: np.ndarray
    tgt_conf_y: np.ndarray
    eps_src: np.ndarray
    eps_tgt: np.ndarray


def _softplus(x):
    return np.logaddexp(0.0, x)


def _ce_rows(logits, labels):
    idx = np.arange(len(labels))
    return logsumexp(logits, axis=1) - logits[idx, labels]


def _entropy_rows(probs):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1)


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_weights(W, n_classes):
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (n_classes,):
        raise ValueError(f"W must have shape ({n_classes},), got {W.shape}")
    return W


# ---------------------------------------------------------------------------
# standalone term values (evaluation path, no dropout)
# ---------------------------------------------------------------------------


def adv_loss(params, cfg: NetConfig, src_feats, tgt_feats, src_labels, W) -> float:
    """Weighted domain binary cross-entropy of the discriminator."""
    src_feats = np.asarray(src_feats, dtype=np.float64)
    tgt_feats = np.asarray(tgt_feats, dtype=np.float64)
    if len(src_feats) == 0 or len(tgt_feats) == 0:
        raise ValueError("adv_loss requires nonempty source and target batches")
    W = _check_weights(W, cfg.n_classes)
    w = W[np.asarray(src_labels)]
    a_s, _ = mlp_forward(params, cfg, "dis", src_feats)
    a_t, _ = mlp_forward(params, cfg, "dis", tgt_feats)
    return float(np.mean(w * _softplus(-a_s[:, 0])) + np.mean(_softplus(a_t[:, 0])))


def class_loss(params, cfg: NetConfig, src_z, src_y, conf_z, conf_y, W) -> float:
    """Weighted source cross-entropy plus confident-target cross-entropy.

    An empty confident-target set contributes 0 (documented fallback).
    """
    src_z = np.asarray(src_z, dtype=np.float64)
    if len(src_z) == 0:
        raise ValueError("class_loss requires a nonempty source batch")
    W = _check_weights(W, cfg.n_classes)
    logits_s, _ = mlp_forward(params, cfg, "cls", src_z)
    value = float(np.mean(W[np.asarray(src_y)] * _ce_rows(logits_s, np.asarray(src_y))))
    conf_z = np.asarray(conf_z, dtype=np.float64)
    if len(conf_z) > 0:
        logits_c, _ = mlp_forward(params, cfg, "cls", conf_z)
        value += float(np.mean(_ce_rows(logits_c, np.asarray(conf_y))))
    return value


def recon_loss(params, cfg: NetConfig, src_x, src_z, src_y, tgt_x, tgt_z, W) -> float:
    """Mean per-sample Euclidean reconstruction error, source rows weighted."""
    src_x = np.asarray(src_x, dtype=np.float64)
    tgt_x = np.asarray(tgt_x, dtype=np.float64)
    W = _check_weights(W, cfg.n_classes)
    xhat_s, _ = mlp_forward(params, cfg, "dec", np.asarray(src_z, dtype=np.float64))
    xhat_t, _ = mlp_forward(params, cfg, "dec", np.asarray(tgt_z, dtype=np.float64))
    if xhat_s.shape != src_x.shape or xhat_t.shape != tgt_x.shape:
        raise ValueError("reconstruction/input dimension mismatch")
    norm_s = np.linalg.norm(xhat_s - src_x, axis=1)
    norm_t = np.linalg.norm(xhat_t - tgt_x, axis=1)
    return float(np.mean(W[np.asarray(src_y)] * norm_s) + np.mean(norm_t))


def _cda_pieces(params, cfg, prior_means, z, mu, logvar):
    logits, _ = mlp_forward(params, cfg, "cls", z)
    probs = _softmax_rows(logits)
    sq = (z - mu) ** 2 * np.exp(-logvar)
    logq = -0.5 * np.sum(LOG_2PI + logvar + sq, axis=1)
    d_lat = z.shape[1]
    sqdist = (
        np.sum(z**2, axis=1, keepdims=True)
        - 2.0 * z @ prior_means.T
        + np.sum(prior_means**2, axis=1)
    )
    logp = -0.5 * (d_lat * LOG_2PI + sqdist)
    return probs, logq, logp


def cda_loss(
    params,
    cfg: NetConfig,
    priors: ClassPriorBank,
    z,
    mu,
    logvar,
    W,
    src_mask,
    labels,
) -> float:
    """Classifier-weighted log-ratio between posterior and class priors.

    sum_y q(y|z) * [log q(z|x) - log p(z|y)], averaged over the batch, with
    source rows additionally scaled by their class weight. May be negative.
    """
    if priors.n_classes != cfg.n_classes:
        raise ValueError(
            f"prior bank has {priors.n_classes} classes, classifier emits {cfg.n_classes}"
        )
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    W = _check_weights(W, cfg.n_classes)
    src_mask = np.asarray(src_mask, dtype=bool)
    probs, logq, logp = _cda_pieces(params, cfg, priors.means, z, mu, logvar)
    per_sample = logq - np.sum(probs * logp, axis=1)
    scale = np.ones(len(z))
    scale[src_mask] = W[np.asarray(labels)[src_mask]]
    return float(np.mean(scale * per_sample))


def em_loss(tgt_probs) -> float:
    """Mean prediction entropy (nats) over a target batch."""
    probs = np.asarray(tgt_probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("em_loss requires a nonempty batch")
    check_simplex(probs, "tgt_probs")
    return float(np.mean(_entropy_rows(probs)))


# ---------------------------------------------------------------------------
# fused forward/backward for one training step
# ---------------------------------------------------------------------------


def step_losses_and_grads(
    params,
    cfg: NetConfig,
    batch: StepBatch,
    weights: TermWeights,
    W,
    *,
    train: bool = True,
    rng=None,
    reverse_adversarial: bool = True,
):
    """Compute all enabled loss terms and gradients of the weighted total.

    Returns ``(LossBreakdown, grads)`` where ``grads`` has one entry per
    parameter (zeros for parameters no enabled term touches). With
    ``reverse_adversarial`` (the training setting) the adversarial cotangent
    reaching the encoder is sign-reversed, so descending on ``grads`` trains
    the discriminator while pushing the encoder toward domain confusion;
    passing False yields the true derivative everywhere, which is what the
    central-difference oracle checks. Terms with weight exactly 0 are skipped
    and reported as 0.
    """
    src_x = np.asarray(batch.src_x, dtype=np.float64)
    src_y = np.asarray(batch.src_y)
    tgt_x = np.asarray(batch.tgt_x, dtype=np.float64)
    n_src, n_tgt = len(src_x), len(tgt_x)
    if n_src == 0 or n_tgt == 0:
        raise ValueError("source and target batches must be nonempty")
    conf_mask = np.asarray(batch.tgt_conf_mask, dtype=bool)
    conf_y = np.asarray(batch.tgt_conf_y)
    if conf_mask.shape != (n_tgt,):
        raise ValueError("tgt_conf_mask must have one entry per target row")
    n_conf = int(conf_mask.sum())
    W = _check_weights(W, cfg.n_classes)
    w_src = W[src_y]
    prior_means = params["priors/means"]

    # forward passes (shared by every term)
    f_s, c_enc_s = mlp_forward(params, cfg, "enc", src_x)
    f_t, c_enc_t = mlp_forward(params, cfg, "enc", tgt_x)
    mu_s, c_mu_s = mlp_forward(params, cfg, "mu", f_s)
    lv_s, c_lv_s = mlp_forward(params, cfg, "lv", f_s)
    mu_t, c_mu_t = mlp_forward(params, cfg, "mu", f_t)
    lv_t, c_lv_t = mlp_forward(params, cfg, "lv", f_t)
    eps_s = np.asarray(batch.eps_src, dtype=np.float64)
    eps_t = np.asarray(batch.eps_tgt, dtype=np.float64)
    if eps_s.shape != mu_s.shape or eps_t.shape != mu_t.shape:
        raise ValueError("eps draws must match latent shapes")
    std_s = np.exp(0.5 * lv_s)
    std_t = np.exp(0.5 * lv_t)
    z_s = mu_s + std_s * eps_s
    z_t = mu_t + std_t * eps_t
    logits_s, c_cls_s = mlp_forward(params, cfg, "cls", z_s)
    logits_t, c_cls_t = mlp_forward(params, cfg, "cls", z_t)
    p_s = _softmax_rows(logits_s)
    p_t = _softmax_rows(logits_t)

    terms = dict.fromkeys(TERM_NAMES, 0.0)
    d_logits_s = np.zeros_like(logits_s)
    d_logits_t = np.zeros_like(logits_t)
    dz_s = np.zeros_like(z_s)
    dz_t = np.zeros_like(z_t)
    d_mu_s = np.zeros_like(mu_s)
    d_mu_t = np.zeros_like(mu_t)
    d_lv_s = np.zeros_like(lv_s)
    d_lv_t = np.zeros_like(lv_t)
    grads = {key: np.zeros_like(value) for key, value in params.items()}

    def accumulate(g):
        for key, value in g.items():
            grads[key] += value

    # classification: weighted source CE + confident-target CE
    if weights.class_w != 0.0:
        ce_s = _ce_rows(logits_s, src_y)
        terms["class_loss"] = float(np.mean(w_src * ce_s))
        onehot = np.zeros_like(p_s)
        onehot[np.arange(n_src), src_y] = 1.0
        d_logits_s += weights.class_w * (w_src / n_src)[:, None] * (p_s - onehot)
        if n_conf > 0:
            rows = np.flatnonzero(conf_mask)
            labels_c = conf_y[rows]
            ce_c = _ce_rows(logits_t[rows], labels_c)
            terms["class_loss"] += float(np.mean(ce_c))
            onehot_c = np.zeros((n_conf, cfg.n_classes))
            onehot_c[np.arange(n_conf), labels_c] = 1.0
            d_logits_t[rows] += weights.class_w / n_conf * (p_t[rows] - onehot_c)

    # adversarial domain loss on encoder features
    if weights.adv_w != 0.0:
        a_s, c_dis_s = mlp_forward(params, cfg, "dis", f_s, train=train, rng=rng)
        a_t, c_dis_t = mlp_forward(params, cfg, "dis", f_t, train=train, rng=rng)
        a_s, a_t = a_s[:, 0], a_t[:, 0]
        terms["adv_loss"] = float(
            np.mean(w_src * _softplus(-a_s)) + np.mean(_softplus(a_t))
        )
        d_a_s = weights.adv_w * (w_src / n_src) * (sigmoid(a_s) - 1.0)
        d_a_t = weights.adv_w / n_tgt * sigmoid(a_t)
        g_dis_s, df_dis_s = mlp_backward(params, cfg, "dis", c_dis_s, d_a_s[:, None])
        g_dis_t, df_dis_t = mlp_backward(params, cfg, "dis", c_dis_t, d_a_t[:, None])
        accumulate(g_dis_s)
        accumulate(g_dis_t)
    else:
        df_dis_s = df_dis_t = None

    # reconstruction
    if weights.recon_w != 0.0:
        xhat_s, c_dec_s = mlp_forward(params, cfg, "dec", z_s)
        xhat_t, c_dec_t = mlp_forward(params, cfg, "dec", z_t)
        diff_s = xhat_s - src_x
        diff_t = xhat_t - tgt_x
        norm_s = np.linalg.norm(diff_s, axis=1)
        norm_t = np.linalg.norm(diff_t, axis=1)
        terms["recon_loss"] = float(np.mean(w_src * norm_s) + np.mean(norm_t))
        # unit direction; zero where the norm vanishes (subgradient choice)
        with np.errstate(invalid="ignore", divide="ignore"):
            u_s = np.where(norm_s[:, None] > 0.0, diff_s / norm_s[:, None], 0.0)
            u_t = np.where(norm_t[:, None] > 0.0, diff_t / norm_t[:, None], 0.0)
        g_dec_s, dz = mlp_backward(
            params, cfg, "dec", c_dec_s, weights.recon_w * (w_src / n_src)[:, None] * u_s
        )
        dz_s += dz
        g_dec_t, dz = mlp_backward(
            params, cfg, "dec", c_dec_t, weights.recon_w / n_tgt * u_t
        )
        dz_t += dz
        accumulate(g_dec_s)
        accumulate(g_dec_t)

    # class-conditional latent alignment over source + confident target rows
    if weights.cda_w != 0.0:
        if prior_means.shape[0] != cfg.n_classes:
            raise ValueError("prior bank class count differs from classifier output")
        rows = np.flatnonzero(conf_mask)
        z_m = np.concatenate([z_s, z_t[rows]])
        mu_m = np.concatenate([mu_s, mu_t[rows]])
        lv_m = np.concatenate([lv_s, lv_t[rows]])
        p_m = np.concatenate([p_s, p_t[rows]])
        n_members = len(z_m)
        scale = np.concatenate([w_src, np.ones(len(rows))]) / n_members
        sq = (z_m - mu_m) ** 2 * np.exp(-lv_m)
        logq = -0.5 * np.sum(LOG_2PI + lv_m + sq, axis=1)
        sqdist = (
            np.sum(z_m**2, axis=1, keepdims=True)
            - 2.0 * z_m @ prior_means.T
            + np.sum(prior_means**2, axis=1)
        )
        logp = -0.5 * (cfg.latent_dim * LOG_2PI + sqdist)
        ratio = logq[:, None] - logp
        per_sample = np.sum(p_m * ratio, axis=1)
        terms["cda_loss"] = float(np.sum(scale * per_sample))

        c = weights.cda_w * scale
        d_logits_m = c[:, None] * p_m * (ratio - per_sample[:, None])
        resid = (z_m - mu_m) * np.exp(-lv_m)
        dz_m = c[:, None] * (-resid + (z_m - p_m @ prior_means))
        dmu_m = c[:, None] * resid
        dlv_m = c[:, None] * 0.5 * (sq - 1.0)
        vote = c[:, None] * p_m  # (n, K)
        grads["priors/means"] += vote.sum(axis=0)[:, None] * prior_means - vote.T @ z_m

        d_logits_s += d_logits_m[:n_src]
        d_logits_t[rows] += d_logits_m[n_src:]
        dz_s += dz_m[:n_src]
        dz_t[rows] += dz_m[n_src:]
        d_mu_s += dmu_m[:n_src]
        d_mu_t[rows] += dmu_m[n_src:]
        d_lv_s += dlv_m[:n_src]
        d_lv_t[rows] += dlv_m[n_src:]

    # target prediction entropy
    if weights.em_w != 0.0:
        h_rows = _entropy_rows(p_t)
        terms["em_loss"] = float(np.mean(h_rows))
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(
                p_t > 0.0, p_t * (np.log(p_t) + h_rows[:, None]), 0.0
            )
        d_logits_t += weights.em_w / n_tgt * (-inner)

    # shared reverse passes
    g_cls_s, dz = mlp_backward(params, cfg, "cls", c_cls_s, d_logits_s)
    dz_s += dz
    g_cls_t, dz = mlp_backward(params, cfg, "cls", c_cls_t, d_logits_t)
    dz_t += dz
    accumulate(g_cls_s)
    accumulate(g_cls_t)

    d_mu_s += dz_s
    d_mu_t += dz_t
    d_lv_s += dz_s * 0.5 * std_s * eps_s
    d_lv_t += dz_t * 0.5 * std_t * eps_t

    g_mu_s, df_s = mlp_backward(params, cfg, "mu", c_mu_s, d_mu_s)
    g_lv_s, df = mlp_backward(params, cfg, "lv", c_lv_s, d_lv_s)
    df_s = df_s + df
    g_mu_t, df_t = mlp_backward(params, cfg, "mu", c_mu_t, d_mu_t)
    g_lv_t, df = mlp_backward(params, cfg, "lv", c_lv_t, d_lv_t)
    df_t = df_t + df
    accumulate(g_mu_s)
    accumulate(g_lv_s)
    accumulate(g_mu_t)
    accumulate(g_lv_t)

    if df_dis_s is not None:
        if reverse_adversarial:
            df_dis_s = grad_reverse_backward(df_dis_s, 1.0)
            df_dis_t = grad_reverse_backward(df_dis_t, 1.0)
        df_s = df_s + df_dis_s
        df_t = df_t + df_dis_t

    g_enc_s, _ = mlp_backward(params, cfg, "enc", c_enc_s, df_s)
    g_enc_t, _ = mlp_backward(params, cfg, "enc", c_enc_t, df_t)
    accumulate(g_enc_s)
    accumulate(g_enc_t)

    total = (
        weights.class_w * terms["class_loss"]
        + weights.adv_w * terms["adv_loss"]
        + weights.recon_w * terms["recon_loss"]
        + weights.cda_w * terms["cda_loss"]
        + weights.em_w * terms["em_loss"]
    )
    breakdown = LossBreakdown(total=float(total), **terms)
    return breakdown, grads
