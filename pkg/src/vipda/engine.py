"""Training loop: SGD with momentum, learning-rate and adversarial-ramp
schedules, periodic re-estimation of pseudo-labels and class weights,
ablation switches, divergence rollback and checkpointing.

Everything is single-threaded and fully determined by the config seed: four
independent generator streams (init, source order, target order, latent/dropout
noise) are spawned from it, and their states travel inside checkpoints so a
resumed run continues bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TargetCycler, as_train_view, epoch_batches, read_kv_file
from .labeling import (
    LabelingState,
    estimate_labeling,
    initial_labeling_state,
    labeling_record,
)
from .losses import (
    LossBreakdown,
    StepBatch,
    TermWeights,
    step_losses_and_grads,
)
from .networks import (
    NetConfig,
    NonFiniteActivationError,
    classify,
    init_params,
    latent_mean,
    load_array_map,
    save_array_map,
)

CDL_MODES = ("cda-only", "all-var")


class ParameterUpdateError(RuntimeError):
    """A gradient was non-finite; the message names the parameter."""


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of one training run."""

    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-2
    momentum: float = 0.9
    head_lr_scale: float = 10.0  # heads/decoder/classifier/discriminator vs encoder
    lr_decay_rate: float = 10.0
    lr_decay_power: float = 0.75
    alpha_ramp: float = 10.0
    beta: float = 0.8
    gamma: float = 0.1
    reestimate_every: int = 1  # epochs; 0 disables the labeling pipeline
    use_confident_voting: bool = True  # "ast" switch
    use_adversarial: bool = True  # "adv" switch
    use_cda: bool = True  # "cdl" switch
    cdl_mode: str = "cda-only"  # what "use_cda = False" drops
    seed: int = 0
    latent_dim: int = 2
    feature_dim: int = 16
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    cls_hidden: tuple = (32,)
    dis_hidden: tuple = (64, 64)
    dropout: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.reestimate_every < 0:
            raise ValueError("reestimate_every must be >= 0")
        if self.cdl_mode not in CDL_MODES:
            raise ValueError(f"cdl_mode must be one of {CDL_MODES}")
        if min(self.beta, self.gamma) < 0:
            raise ValueError("beta and gamma must be >= 0")

    def net_config(self, input_dim: int, n_classes: int) -> NetConfig:
        return NetConfig(
            input_dim=input_dim,
            latent_dim=self.latent_dim,
            n_classes=n_classes,
            feature_dim=self.feature_dim,
            enc_hidden=tuple(self.enc_hidden),
            dec_hidden=tuple(self.dec_hidden),
            cls_hidden=tuple(self.cls_hidden),
            dis_hidden=tuple(self.dis_hidden),
            dis_dropout=self.dropout,
        )

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        for key in ("enc_hidden", "dec_hidden", "cls_hidden", "dis_hidden"):
            raw[key] = tuple(raw[key])
        return cls(**raw)


_INT_KEYS = (
    "epochs",
    "batch_size",
    "reestimate_every",
    "seed",
    "latent_dim",
    "feature_dim",
)
_FLOAT_KEYS = (
    "lr",
    "momentum",
    "head_lr_scale",
    "lr_decay_rate",
    "lr_decay_power",
    "alpha_ramp",
    "beta",
    "gamma",
    "dropout",
)
_BOOL_KEYS = ("use_confident_voting", "use_adversarial", "use_cda")
_TUPLE_KEYS = ("enc_hidden", "dec_hidden", "cls_hidden", "dis_hidden")


def train_config_from_file(path) -> TrainConfig:
    """Read a flat ``key = value`` training config; unset keys use defaults."""
    entries = read_kv_file(path)
    kwargs = {}
    for key, value in entries.items():
        if key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in _BOOL_KEYS:
            if value.lower() not in ("true", "false"):
                raise ValueError(f"{key} must be true or false, got {value!r}")
            kwargs[key] = value.lower() == "true"
        elif key in _TUPLE_KEYS:
            kwargs[key] = tuple(int(v) for v in value.split(","))
        elif key == "cdl_mode":
            kwargs[key] = value
        else:
            raise ValueError(f"unknown training config key {key!r}")
    return TrainConfig(**kwargs)


def source_only_config(base: TrainConfig) -> TrainConfig:
    """Baseline: plain source classification, no adaptation machinery."""
    return replace(
        base,
        use_adversarial=False,
        beta=0.0,
        gamma=0.0,
        reestimate_every=0,
    )


VARIANT_NAMES = ("full", "no_ast", "no_adv", "no_cdl")


def variant_config(base: TrainConfig, variant: str, cdl_mode: str = "cda-only") -> TrainConfig:
    """Ablation variants mirroring the three suppressed components."""
    if variant == "full":
        return base
    if variant == "no_ast":
        return replace(base, use_confident_voting=False)
    if variant == "no_adv":
        return replace(base, use_adversarial=False)
    if variant == "no_cdl":
        return replace(base, use_cda=False, cdl_mode=cdl_mode)
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# schedules and the optimizer step
# ---------------------------------------------------------------------------


def lr_schedule(progress: float, lr0: float, rate: float = 10.0, power: float = 0.75) -> float:
    """Annealed rate lr0 * (1 + rate*p)^(-power), p = fraction of training done."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    return lr0 * (1.0 + rate * progress) ** (-power)


def alpha_schedule(progress: float, ramp: float = 10.0) -> float:
    """Adversarial weight ramp 2/(1 + exp(-ramp*p)) - 1, from 0 toward 1."""
    return 2.0 / (1.0 + math.exp(-ramp * progress)) - 1.0


def sgd_step(params, grads, velocities, lr, momentum: float):
    """Momentum SGD: v <- momentum*v + g; param <- param - lr*v (in place).

    ``lr`` may be a float or a per-parameter dict keyed like ``params``.
    """
    for key in params:
        g = grads[key]
        if not np.isfinite(g).all():
            raise ParameterUpdateError(f"non-finite gradient for {key}")
        lr_k = lr[key] if isinstance(lr, dict) else lr
        velocities[key] = momentum * velocities[key] + g
        params[key] = params[key] - lr_k * velocities[key]
    return params, velocities


def _lr_map(params, lr_now: float, head_scale: float) -> dict:
    # the encoder plays the backbone role; everything else gets the fast rate
    return {
        key: lr_now if key.startswith("enc/") else lr_now * head_scale
        for key in params
    }


# ---------------------------------------------------------------------------
# training state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr: float
    alpha: float
    losses: LossBreakdown

    def as_tuple(self):
        return (self.step, self.lr, self.alpha) + self.losses.as_tuple()


@dataclass
class TrainState:
    config: TrainConfig
    net_config: NetConfig
    params: dict
    velocities: dict
    labeling: LabelingState
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)
    labeling_history: list = field(default_factory=list)
    diverged: bool = False
    data_rng: np.random.Generator = None
    noise_rng: np.random.Generator = None
    tgt_cycler: TargetCycler = None


def _fresh_state(config: TrainConfig, view) -> TrainState:
    netcfg = config.net_config(view.input_dim, view.n_source_classes)
    seq = np.random.SeedSequence(config.seed)
    init_seq, src_seq, tgt_seq, noise_seq = seq.spawn(4)
    params = init_params(netcfg, np.random.default_rng(init_seq))
    return TrainState(
        config=config,
        net_config=netcfg,
        params=params,
        velocities={key: np.zeros_like(value) for key, value in params.items()},
        labeling=initial_labeling_state(view.n_source_classes),
        data_rng=np.random.default_rng(src_seq),
        noise_rng=np.random.default_rng(noise_seq),
        tgt_cycler=TargetCycler(
            len(view.target_x), config.batch_size, np.random.default_rng(tgt_seq)
        ),
    )


def reestimate(state: TrainState, view) -> LabelingState:
    """Recompute the labeling snapshot from the current model (mean latents).

    With confident voting disabled ("ast" ablation) the weight vector is the
    max-normalized mean of classifier predictions over all target samples and
    the confident set is empty; threshold bookkeeping is kept either way.
    """
    params, netcfg = state.params, state.net_config
    src_lat = latent_mean(params, netcfg, view.source_x)
    tgt_lat = latent_mean(params, netcfg, view.target_x)
    labeling = estimate_labeling(src_lat, view.source_y, tgt_lat, view.n_source_classes)
    if not state.config.use_confident_voting:
        probs = classify(params, netcfg, tgt_lat)
        raw = probs.mean(axis=0)
        labeling = LabelingState(
            threshold=labeling.threshold,
            conf_indices=np.zeros(0, dtype=np.int64),
            conf_labels=np.zeros(0, dtype=np.int64),
            conf_probs=np.zeros((0, view.n_source_classes)),
            class_weights=raw / raw.max(),
        )
    return labeling


def _conf_lookup(labeling: LabelingState, n_targets: int):
    mask = np.zeros(n_targets, dtype=bool)
    labels = np.zeros(n_targets, dtype=np.int64)
    mask[labeling.conf_indices] = True
    labels[labeling.conf_indices] = labeling.conf_labels
    return mask, labels


def _term_weights(config: TrainConfig, alpha: float) -> TermWeights:
    recon_w = config.beta
    cda_w = config.beta
    if not config.use_cda:
        cda_w = 0.0
        if config.cdl_mode == "all-var":
            recon_w = 0.0
    return TermWeights(
        class_w=1.0,
        adv_w=alpha if config.use_adversarial else 0.0,
        recon_w=recon_w,
        cda_w=cda_w,
        em_w=config.gamma,
    )


def fit(config: TrainConfig, data, *, state: TrainState = None, stop_epoch: int = None) -> TrainState:
    """Train on a scenario; returns the final state with full loss history.

    ``state`` resumes a previous run (its config must match). ``stop_epoch``
    ends the run early, e.g. to checkpoint mid-way; schedules always span
    ``config.epochs``. On a non-finite loss the run aborts, restoring the last
    epoch-end snapshot and setting ``state.diverged``.
    """
    view = as_train_view(data)
    if state is None:
        state = _fresh_state(config, view)
    elif state.config != config:
        raise ValueError("resume config differs from checkpointed config")
    last_epoch = config.epochs if stop_epoch is None else min(stop_epoch, config.epochs)

    n_src = len(view.source_x)
    steps_per_epoch = -(-n_src // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    conf_mask, conf_labels = _conf_lookup(state.labeling, len(view.target_x))

    def snapshot():
        return (
            {key: value.copy() for key, value in state.params.items()},
            {key: value.copy() for key, value in state.velocities.items()},
            state.labeling,
            state.epoch,
            state.step,
        )

    good = snapshot()
    for epoch in range(state.epoch, last_epoch):
        src_batches = epoch_batches(n_src, config.batch_size, state.data_rng)
        for src_idx in src_batches:
            tgt_idx = state.tgt_cycler.next_batch()
            progress = state.step / total_steps
            alpha = (
                alpha_schedule(progress, config.alpha_ramp)
                if config.use_adversarial
                else 0.0
            )
            lr_now = lr_schedule(
                progress, config.lr, config.lr_decay_rate, config.lr_decay_power
            )
            eps_src = state.noise_rng.standard_normal((len(src_idx), config.latent_dim))
            eps_tgt = state.noise_rng.standard_normal((len(tgt_idx), config.latent_dim))
            batch = StepBatch(
                src_x=view.source_x[src_idx],
                src_y=view.source_y[src_idx],
                tgt_x=view.target_x[tgt_idx],
                tgt_conf_mask=conf_mask[tgt_idx],
                tgt_conf_y=conf_labels[tgt_idx],
                eps_src=eps_src,
                eps_tgt=eps_tgt,
            )
            try:
                bd, grads = step_losses_and_grads(
                    state.params,
                    state.net_config,
                    batch,
                    _term_weights(config, alpha),
                    state.labeling.class_weights,
                    train=True,
                    rng=state.noise_rng,
                )
                if not np.isfinite(bd.total):
                    raise NonFiniteActivationError("non-finite total loss")
                sgd_step(
                    state.params,
                    grads,
                    state.velocities,
                    _lr_map(state.params, lr_now, config.head_lr_scale),
                    config.momentum,
                )
            except (NonFiniteActivationError, ParameterUpdateError):
                params, velocities, labeling, epoch_g, step_g = good
                state.params = params
                state.velocities = velocities
                state.labeling = labeling
                state.epoch = epoch_g
                state.step = step_g
                state.history = [r for r in state.history if r.step < step_g]
                state.diverged = True
                return state
            state.history.append(
                StepRecord(step=state.step, lr=lr_now, alpha=alpha, losses=bd)
            )
            state.step += 1
        state.epoch += 1
        if config.reestimate_every and state.epoch % config.reestimate_every == 0:
            state.labeling = reestimate(state, view)
            state.labeling_history.append(labeling_record(state.epoch, state.labeling))
            conf_mask, conf_labels = _conf_lookup(state.labeling, len(view.target_x))
        good = snapshot()
    return state


# ---------------------------------------------------------------------------
# checkpointing (parameters + optimizer + counters + rng streams + labeling)
# ---------------------------------------------------------------------------


def save_checkpoint(path, state: TrainState) -> None:
    arrays = {}
    for key, value in state.params.items():
        arrays[f"param/{key}"] = value
    for key, value in state.velocities.items():
        arrays[f"vel/{key}"] = value
    arrays["counters"] = np.array([state.step, state.epoch, int(state.diverged)])
    lab = state.labeling
    arrays["labeling/threshold"] = np.array(lab.threshold)
    arrays["labeling/conf_indices"] = lab.conf_indices
    arrays["labeling/conf_labels"] = lab.conf_labels
    arrays["labeling/conf_probs"] = lab.conf_probs
    arrays["labeling/class_weights"] = lab.class_weights
    arrays["rng/data"] = np.array(json.dumps(state.data_rng.bit_generator.state))
    arrays["rng/noise"] = np.array(json.dumps(state.noise_rng.bit_generator.state))
    arrays["rng/tgt_cycler"] = np.array(json.dumps(state.tgt_cycler.get_state()))
    arrays["config"] = np.array(state.config.to_json())
    arrays["meta/n_targets"] = np.array(state.tgt_cycler.n_items)
    save_array_map(path, arrays)


def load_checkpoint(path) -> TrainState:
    arrays = load_array_map(path)
    config = TrainConfig.from_json(str(arrays["config"]))
    params = {
        key[len("param/") :]: value
        for key, value in arrays.items()
        if key.startswith("param/")
    }
    velocities = {
        key[len("vel/") :]: value
        for key, value in arrays.items()
        if key.startswith("vel/")
    }
    step, epoch, diverged = (int(v) for v in arrays["counters"])
    labeling = LabelingState(
        threshold=float(arrays["labeling/threshold"]),
        conf_indices=arrays["labeling/conf_indices"],
        conf_labels=arrays["labeling/conf_labels"],
        conf_probs=arrays["labeling/conf_probs"],
        class_weights=arrays["labeling/class_weights"],
    )
    data_rng = np.random.default_rng()
    data_rng.bit_generator.state = json.loads(str(arrays["rng/data"]))
    noise_rng = np.random.default_rng()
    noise_rng.bit_generator.state = json.loads(str(arrays["rng/noise"]))
    cycler = TargetCycler(
        int(arrays["meta/n_targets"]), config.batch_size, np.random.default_rng()
    )
    cycler.set_state(json.loads(str(arrays["rng/tgt_cycler"])))
    n_classes = params["priors/means"].shape[0]
    input_dim = params["enc/0/W"].shape[1]
    return TrainState(
        config=config,
        net_config=config.net_config(input_dim, n_classes),
        params=params,
        velocities=velocities,
        labeling=labeling,
        epoch=epoch,
        step=step,
        diverged=bool(diverged),
        data_rng=data_rng,
        noise_rng=noise_rng,
        tgt_cycler=cycler,
    )
