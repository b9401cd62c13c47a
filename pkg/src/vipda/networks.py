"""Network components: encoder, Gaussian posterior heads, decoder, classifier
and domain discriminator, all small MLPs over float64 numpy arrays.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed like ``"enc/0/W"``;
gradients come back in an identically keyed dict from explicit reverse-mode
passes (no autodiff framework). Every backward pass is validated against a
central-difference oracle in :mod:`vipda.gradcheck`.

Hidden activations are leaky rectifiers; the discriminator applies dropout on
its hidden layers during training only. Forward passes are deterministic
functions of (inputs, params) — evaluation-mode calls are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import softmax

NET_NAMES = ("enc", "mu", "lv", "dec", "cls", "dis")

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteActivationError(RuntimeError):
    """A forward pass produced NaN/inf; the message names net and layer."""


@dataclass(frozen=True)
class NetConfig:
    """Layer sizing for all six networks plus activation/dropout settings."""

    input_dim: int
    latent_dim: int
    n_classes: int
    feature_dim: int = 16
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    cls_hidden: tuple = (32,)
    dis_hidden: tuple = (64, 64)
    dis_dropout: float = 0.5
    leaky_slope: float = 0.01
    prior_init_scale: float = 0.1
    head_init_scale: float = 0.1

    def layer_sizes(self, net: str) -> tuple:
        if net == "enc":
            return (self.input_dim, *self.enc_hidden, self.feature_dim)
        if net == "mu" or net == "lv":
            return (self.feature_dim, self.latent_dim)
        if net == "dec":
            return (self.latent_dim, *self.dec_hidden, self.input_dim)
        if net == "cls":
            return (self.latent_dim, *self.cls_hidden, self.n_classes)
        if net == "dis":
            return (self.feature_dim, *self.dis_hidden, 1)
        raise KeyError(net)


@dataclass
class LatentGaussian:
    """Per-sample posterior parameters; arrays are (n, latent_dim) or (latent_dim,)."""

    mean: np.ndarray
    logvar: np.ndarray


@dataclass
class ClassPriorBank:
    """Per-class latent prior parameters N(mean_y, I).

    Means are learnable (stored under the ``"priors/means"`` parameter key);
    log-variances are pinned to zero, i.e. unit isotropic covariance.
    """

    means: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def logvars(self) -> np.ndarray:
        return np.zeros_like(self.means)


def init_params(cfg: NetConfig, rng: np.random.Generator) -> dict:
    """He-initialized weights, zero biases, small random prior means.

    The posterior heads use a smaller fan-in scale so that initial latent
    means stay O(1) and initial log-variances stay near 0 (unit noise).
    """
    params = {}
    for net in NET_NAMES:
        sizes = cfg.layer_sizes(net)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            std = np.sqrt(2.0 / fan_in)
            # the posterior heads start small: initial latents near the origin
            # (where the priors start) keep the early latent-alignment term and
            # its quadratic gradients tame
            if net in ("mu", "lv"):
                std = cfg.head_init_scale * np.sqrt(1.0 / fan_in)
            params[f"{net}/{i}/W"] = std * rng.standard_normal((fan_out, fan_in))
            params[f"{net}/{i}/b"] = np.zeros(fan_out)
    params["priors/means"] = cfg.prior_init_scale * rng.standard_normal(
        (cfg.n_classes, cfg.latent_dim)
    )
    return params


@dataclass
class MlpCache:
    """Intermediates retained by a forward pass for the backward pass."""

    inputs: list
    pre_acts: list
    masks: list


def mlp_forward(params, cfg: NetConfig, net: str, x, *, train=False, rng=None):
    """Forward pass returning (output, cache).

    ``x`` is (n, in_dim). Dropout (discriminator only) needs ``train=True``
    and an ``rng``; masks use inverted scaling so evaluation needs no rescale.
    """
    sizes = cfg.layer_sizes(net)
    dropout = cfg.dis_dropout if net == "dis" else 0.0
    n_layers = len(sizes) - 1
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != sizes[0]:
        raise ValueError(f"{net} expects (n, {sizes[0]}) input, got {h.shape}")
    cache = MlpCache(inputs=[], pre_acts=[], masks=[])
    for i in range(n_layers):
        w = params[f"{net}/{i}/W"]
        b = params[f"{net}/{i}/b"]
        cache.inputs.append(h)
        a = h @ w.T + b
        if not np.isfinite(a).all():
            raise NonFiniteActivationError(f"non-finite activation in {net} layer {i}")
        if i < n_layers - 1:
            h = np.where(a > 0.0, a, cfg.leaky_slope * a)
            mask = None
            if dropout > 0.0 and train:
                if rng is None:
                    raise ValueError("dropout requires an rng in training mode")
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * mask
            cache.pre_acts.append(a)
            cache.masks.append(mask)
        else:
            h = a
    return h, cache


def mlp_backward(params, cfg: NetConfig, net: str, cache: MlpCache, dout):
    """Reverse pass: cotangent of the output -> (param grads, input cotangent)."""
    sizes = cfg.layer_sizes(net)
    n_layers = len(sizes) - 1
    grads = {}
    d = np.asarray(dout, dtype=np.float64)
    for i in range(n_layers - 1, -1, -1):
        w = params[f"{net}/{i}/W"]
        grads[f"{net}/{i}/W"] = d.T @ cache.inputs[i]
        grads[f"{net}/{i}/b"] = d.sum(axis=0)
        d = d @ w
        if i > 0:
            j = i - 1
            if cache.masks[j] is not None:
                d = d * cache.masks[j]
            d = d * np.where(cache.pre_acts[j] > 0.0, 1.0, cfg.leaky_slope)
    return grads, d


def _as_batch(x, dim, name):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} must have last dimension {dim}, got {x.shape}")
    return x, single


def forward_latent(params, cfg: NetConfig, x) -> LatentGaussian:
    """Posterior parameters (mean, logvar) of the latent Gaussian for ``x``."""
    xb, single = _as_batch(x, cfg.input_dim, "x")
    f, _ = mlp_forward(params, cfg, "enc", xb)
    mean, _ = mlp_forward(params, cfg, "mu", f)
    logvar, _ = mlp_forward(params, cfg, "lv", f)
    if single:
        mean, logvar = mean[0], logvar[0]
    return LatentGaussian(mean=mean, logvar=logvar)


def latent_mean(params, cfg: NetConfig, x) -> np.ndarray:
    """Deterministic latent representation: the posterior mean only."""
    xb, single = _as_batch(x, cfg.input_dim, "x")
    f, _ = mlp_forward(params, cfg, "enc", xb)
    mean, _ = mlp_forward(params, cfg, "mu", f)
    return mean[0] if single else mean


def encode_features(params, cfg: NetConfig, x) -> np.ndarray:
    """Encoder output (the representation seen by the discriminator)."""
    xb, single = _as_batch(x, cfg.input_dim, "x")
    f, _ = mlp_forward(params, cfg, "enc", xb)
    return f[0] if single else f


def sample_latent(g: LatentGaussian, eps) -> np.ndarray:
    """Reparameterized draw z = mean + exp(logvar/2) * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    mean = np.asarray(g.mean, dtype=np.float64)
    logvar = np.asarray(g.logvar, dtype=np.float64)
    if eps.shape != mean.shape:
        raise ValueError(f"eps shape {eps.shape} != mean shape {mean.shape}")
    return mean + np.exp(0.5 * logvar) * eps


def decode(params, cfg: NetConfig, z) -> np.ndarray:
    """Reconstruction of the input from a latent vector (linear output)."""
    zb, single = _as_batch(z, cfg.latent_dim, "z")
    xhat, _ = mlp_forward(params, cfg, "dec", zb)
    return xhat[0] if single else xhat


def classify(params, cfg: NetConfig, z) -> np.ndarray:
    """Class probabilities over all source classes for a latent vector."""
    zb, single = _as_batch(z, cfg.latent_dim, "z")
    logits, _ = mlp_forward(params, cfg, "cls", zb)
    probs = softmax(logits)
    return probs[0] if single else probs


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def discriminate(params, cfg: NetConfig, f, *, train=False, rng=None) -> np.ndarray:
    """Probability that a feature came from the source domain, in (0, 1)."""
    fb, single = _as_batch(f, cfg.feature_dim, "f")
    logit, _ = mlp_forward(params, cfg, "dis", fb, train=train, rng=rng)
    prob = sigmoid(logit[:, 0])
    return float(prob[0]) if single else prob


def grad_reverse(f, lam: float):
    """Forward pass of the gradient-reversal layer: the identity."""
    if not np.isfinite(lam):
        raise ValueError("lambda must be finite")
    return f


def grad_reverse_backward(dout, lam: float):
    """Backward rule of gradient reversal: scale the cotangent by -lambda.

    This is a pseudo-gradient by construction, not the derivative of the
    forward map.
    """
    return -lam * np.asarray(dout, dtype=np.float64)


# ---------------------------------------------------------------------------
# checkpoint IO: a flat key -> array map in .npz form, bit-exact round trip
# ---------------------------------------------------------------------------


def save_array_map(path, arrays: dict) -> None:
    for key, value in arrays.items():
        if key == "__format_version__":
            raise ValueError("'__format_version__' is reserved")
        if not isinstance(value, np.ndarray):
            raise TypeError(f"{key}: expected ndarray, got {type(value).__name__}")
    np.savez(path, __format_version__=np.int64(CHECKPOINT_FORMAT_VERSION), **arrays)


def load_array_map(path) -> dict:
    with np.load(path, allow_pickle=False) as npz:
        data = {key: npz[key] for key in npz.files}
    version = data.pop("__format_version__", None)
    if version is None:
        raise ValueError(f"{path}: missing format version field")
    if int(version) != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {int(version)}")
    return data
