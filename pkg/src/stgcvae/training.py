"""SGD training loop: schedule, gradient accumulation over variable-size
sequence graphs, deterministic shuffling, splits, and resumable state."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import graph, losses
from .data import SequenceWindow, to_displacements
from .errors import ConfigError, FormatError, ParameterError
from .model import ModelConfig, ParamStore, TrajCvae, load_params, save_params


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 128          # sequences accumulated per SGD step
    lr_initial: float = 0.01
    lr_after: float = 0.002
    lr_switch_epoch: int = 150
    seed: int = 0
    latent_length: int = 20
    held_out_scene: str = ""
    cap_epochs: int = 250          # KL annealing cap
    anneal_slope: float = losses.ANNEAL_SLOPE
    val_every: int = 10            # best-checkpoint cadence (epochs)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_switch_epoch >= self.epochs:
            raise ConfigError("lr_switch_epoch must be < epochs")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Flat key=value plain text; keys match the field names."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                current = getattr(cls(), key)
                kwargs[key] = type(current)(value)
        return cls(**kwargs)


@dataclass
class TrainState:
    params: ParamStore
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_val_metric: float = float("inf")
    skipped_windows: int = 0


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Initial rate, then the reduced rate from lr_switch_epoch onward."""
    if not 0 <= epoch < config.epochs:
        raise ParameterError(
            f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr_initial if epoch < config.lr_switch_epoch \
        else config.lr_after


def window_gradients(model: TrajCvae, window: SequenceWindow, epoch: int,
                     rng: np.random.Generator,
                     slope: float = losses.ANNEAL_SLOPE,
                     cap_epochs: int = losses.ANNEAL_CAP_EPOCHS,
                     ) -> tuple[dict, losses.LossReport]:
    """One forward/backward pass over a single training window.

    Returns (gradients by parameter name, loss report).
    """
    disp = to_displacements(window.positions)
    adj = graph.normalized_adjacency(window.positions)
    obs = model.config.obs_len
    scaled = disp.values * model.config.feature_scale

    p = model.traced_params()
    v_full = ad.leaf(scaled)
    v_obs = ad.leaf(scaled[:, :obs, :])
    prior = model.prior_forward(p, v_obs, adj[:obs])
    post = model.recog_forward(p, v_full, adj, train=True, rng=rng)
    z = ad.reparameterize(post.mu, post.logvar, rng)
    pred = model.decode(p, z, v_obs, adj[:obs])
    report = losses.total_loss(pred, scaled, post, prior, epoch,
                               slope=slope, cap_epochs=cap_epochs)
    grads = ad.backward(report.total_value)
    return {name: grads.get(leaf) for name, leaf in p.items()}, report


def train_epoch(state: TrainState, model: TrajCvae,
                windows: list[SequenceWindow], config: TrainConfig,
                log: losses.MetricsLog | None = None) -> TrainState:
    """One epoch of accumulated SGD over a shuffled window order.

    Every batch_size windows (and at the epoch tail) one step
    param <- param - lr * mean(grad) is applied. Windows with zero agents
    are skipped and counted.
    """
    if not windows:
        raise ConfigError("train_epoch: empty window list")
    lr = lr_schedule(state.epoch, config)
    order = state.rng.permutation(len(windows))

    acc: dict[str, np.ndarray] = {}
    in_batch = 0
    epoch_reports = []

    def apply_step():
        nonlocal acc, in_batch
        for name in acc:
            model.params[name] = model.params[name] - lr * acc[name] / in_batch
        acc = {}
        in_batch = 0
        state.step += 1

    for idx in order:
        window = windows[idx]
        if window.n_agents == 0:
            state.skipped_windows += 1
            continue
        grads, report = window_gradients(
            model, window, state.epoch, state.rng,
            slope=config.anneal_slope, cap_epochs=config.cap_epochs)
        for name, g in grads.items():
            acc[name] = acc.get(name, 0.0) + g
        in_batch += 1
        epoch_reports.append(report)
        if in_batch == config.batch_size:
            apply_step()
            if log is not None:
                log.append(state.epoch, state.step, epoch_reports[-1])
    if in_batch:
        apply_step()
        if log is not None:
            log.append(state.epoch, state.step, epoch_reports[-1])

    state.epoch += 1
    return state


def make_split(windows: list[SequenceWindow],
               held_out: str) -> tuple[list[SequenceWindow],
                                       list[SequenceWindow]]:
    """Leave-one-scene-out: held-out scene's windows are the test set."""
    scenes = {w.scene for w in windows}
    if held_out not in scenes:
        raise ConfigError(
            f"unknown held-out scene {held_out!r}; have {sorted(scenes)}")
    train = [w for w in windows if w.scene != held_out]
    test = [w for w in windows if w.scene == held_out]
    return train, test


# ---------------------------------------------------------------------------
# resumable checkpoints (STGC params + rng/progress metadata)


def checkpoint(state: TrainState, model: TrajCvae, path,
               config: TrainConfig | None = None) -> None:
    """Full-precision snapshot that resumes bit-identically."""
    from dataclasses import asdict
    meta = {k: v for k, v in asdict(model.config).items()}
    meta.update(epoch=state.epoch, step=state.step,
                best_val_metric=state.best_val_metric,
                skipped_windows=state.skipped_windows,
                rng_state=json.dumps(state.rng.bit_generator.state))
    if config is not None:
        meta["seed"] = config.seed
    save_params(path, model.params, metadata=meta, dtype="f8")


def restore(path) -> tuple[TrainState, TrajCvae]:
    store, meta = load_params(path)
    if "rng_state" not in meta:
        raise FormatError(f"{path}: missing training metadata sidecar")
    from .model import config_from_metadata
    config = config_from_metadata(meta)
    model = TrajCvae(config, params=store)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(meta["rng_state"])
    state = TrainState(params=store, rng=rng,
                       epoch=int(meta.get("epoch", 0)),
                       step=int(meta.get("step", 0)),
                       best_val_metric=float(meta.get("best_val_metric",
                                                      "inf")),
                       skipped_windows=int(meta.get("skipped_windows", 0)))
    return state, model
