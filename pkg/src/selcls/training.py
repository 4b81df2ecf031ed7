"""SGD-with-momentum training loop and the method-comparison grid runner.

Protocol notes baked in here:

  * learning rate: lr0 * decay_factor ** floor(epoch / decay_every)
  * momentum update is the classical form v <- mu v + g, theta <- theta - lr v
  * moving-target objective: epochs below the pre-training horizon run
    plain (C+1)-way cross entropy and never touch the target store; later
    epochs use the target loss and refresh the touched targets right after
    each parameter update (or once per epoch when configured so)
  * three-head selective models are trained once per target coverage by
    the grid runner; abstain-head and plain models are trained once and
    evaluated at every coverage
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericFault
from .nn import (
    Network,
    build_network,
    network_backward,
    network_forward,
    save_checkpoint,
    stable_softmax,
)
from .objectives import (
    ObjectiveConfig,
    SatTargetStore,
    objective_dispatch,
    predictive_entropy,
    sat_update_targets,
)
from .util import fmt, rng_for

DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    decay_factor: float = 0.5
    decay_every: int = 25
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    numeric_mode: str = "f64"
    weight_decay: float = 0.0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("need epochs >= 0 and batch_size >= 1")
        if self.lr0 <= 0:
            raise ConfigurationError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.decay_every < 1 or self.decay_factor <= 0:
            raise ConfigurationError(
                "need decay_every >= 1 and decay_factor > 0")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        self.objective.validate()

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "lr0": self.lr0, "momentum": self.momentum,
            "decay_factor": self.decay_factor, "decay_every": self.decay_every,
            "seed": self.seed, "numeric_mode": self.numeric_mode,
            "weight_decay": self.weight_decay,
        }


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    mean_entropy: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    checkpoint_path: str = ""

    def to_csv(self, path, header_comment: str = "") -> None:
        with open(path, "w", newline="") as f:
            if header_comment:
                f.write(f"# {header_comment}\n")
            w = csv.writer(f)
            w.writerow(["epoch", "lr", "train_loss", "train_accuracy",
                        "val_accuracy", "mean_entropy"])
            for e in self.epochs:
                w.writerow([e.epoch, fmt(e.lr), fmt(e.train_loss),
                            fmt(e.train_accuracy), fmt(e.val_accuracy),
                            fmt(e.mean_entropy)])


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ConfigurationError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def sgd_momentum_step(params, grads, velocity, lr, momentum,
                      weight_decay: float = 0.0) -> None:
    """v <- momentum*v + g (+ wd*theta); theta <- theta - lr*v. In place."""
    for theta, g, v in zip(params, grads, velocity):
        if not np.all(np.isfinite(g)):
            raise NumericFault("non-finite gradient in optimizer step")
        if weight_decay:
            g = g + weight_decay * theta
        v *= momentum
        v += g
        theta -= lr * v


def _evaluate(net: Network, X, y):
    """Accuracy over the C real classes and mean full-softmax entropy."""
    trace = network_forward(net, X)
    logits = trace.head_raw["logits"]
    pred = np.argmax(logits[:, :net.n_classes], axis=1)
    acc = float(np.mean(pred == y))
    H, _ = predictive_entropy(logits)
    return acc, float(H.mean())


def train(net: Network, train_data, val_data, cfg: TrainConfig,
          store: SatTargetStore | None = None):
    """Run the optimization loop; returns (TrainReport, target store).

    Deterministic given (net, data, cfg): every shuffle draws from a
    sub-seed derived from cfg.seed and the epoch index. The network is
    mutated in place; nothing else is.
    """
    cfg.validate()
    obj = cfg.objective
    if obj.required_head() != net.head:
        raise ConfigurationError(
            f"objective {obj.kind!r} needs a {obj.required_head()!r} head, "
            f"network has {net.head!r}")
    report = TrainReport()
    if cfg.epochs == 0:
        return report, store

    X = np.asarray(train_data.features, dtype=net.dtype)
    y = np.asarray(train_data.labels, dtype=np.int64)
    Xv = np.asarray(val_data.features, dtype=net.dtype)
    yv = np.asarray(val_data.labels, dtype=np.int64)
    n = X.shape[0]
    C = net.n_classes

    if obj.base_kind == "SAT" and store is None:
        store = SatTargetStore.initialize(
            y, C, momentum=obj.sat_momentum,
            pretrain_epochs=obj.sat_pretrain_epochs)

    params = net.param_arrays()
    velocity = [np.zeros_like(p) for p in params]

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        perm = rng_for(cfg.seed, f"shuffle:{epoch}").permutation(n)
        loss_sum = 0.0
        sat_adaptive = (obj.base_kind == "SAT"
                        and epoch >= obj.sat_pretrain_epochs)
        for start in range(0, n, cfg.batch_size):
            ids = perm[start:start + cfg.batch_size]
            trace = network_forward(net, X[ids])
            result = objective_dispatch(
                obj, trace.head_raw, y[ids], n_classes=C, store=store,
                sample_ids=ids, epoch=epoch)
            if not np.isfinite(result.loss) or result.loss > DIVERGENCE_LIMIT:
                raise NumericFault(
                    f"training diverged (loss={result.loss}) at epoch "
                    f"{epoch}, batch starting at {start}")
            grads = network_backward(net, trace, result.dlogits)
            sgd_momentum_step(params, grads.arrays(), velocity, lr,
                              cfg.momentum, cfg.weight_decay)
            if sat_adaptive and obj.sat_update == "batch":
                p = stable_softmax(trace.head_raw["logits"])
                sat_update_targets(store, ids, p, epoch)
            loss_sum += result.loss * ids.size
        if sat_adaptive and obj.sat_update == "epoch":
            p = stable_softmax(network_forward(net, X).head_raw["logits"])
            sat_update_targets(store, np.arange(n), p, epoch)

        train_acc, _ = _evaluate(net, X, y)
        val_acc, val_entropy = _evaluate(net, Xv, yv)
        report.epochs.append(EpochStats(
            epoch=epoch, lr=lr, train_loss=loss_sum / n,
            train_accuracy=train_acc, val_accuracy=val_acc,
            mean_entropy=val_entropy))
    return report, store


def grid_cell_name(method: str, coverage, seed: int) -> str:
    cov = "all" if coverage is None else f"c{coverage:g}"
    return f"{method.replace('+', '_')}_{cov}_s{seed}"


def train_method_grid(methods, coverages, seeds, make_data, make_net,
                      make_train_cfg, out_dir):
    """Train every grid cell and record a manifest.

    Three-head selective models get one cell per (method, coverage, seed);
    everything else trains once per (method, seed) and is evaluated at all
    coverages later. ``make_data(seed)``, ``make_net(objective, seed)``,
    and ``make_train_cfg(method, coverage, seed)`` inject the pieces.
    Failures are recorded per cell and the grid keeps going.
    """
    os.makedirs(out_dir, exist_ok=True)
    cells = []
    for method in methods:
        base = ObjectiveConfig(kind=method).base_kind
        covs = list(coverages) if base == "SelectiveNet" else [None]
        for coverage in covs:
            for seed in seeds:
                name = grid_cell_name(method, coverage, seed)
                cell = {"method": method, "coverage": coverage, "seed": seed,
                        "name": name, "status": "ok", "checkpoint": "",
                        "error": ""}
                try:
                    train_ds, val_ds, _ = make_data(seed)
                    cfg = make_train_cfg(method, coverage, seed)
                    net = make_net(cfg.objective, seed)
                    report, _ = train(net, train_ds, val_ds, cfg)
                    path = os.path.join(out_dir, f"{name}.checkpoint.json")
                    save_checkpoint(net, path)
                    report.to_csv(os.path.join(out_dir, f"{name}.report.csv"))
                    cell["checkpoint"] = path
                except Exception as exc:  # noqa: BLE001 - recorded per cell
                    cell["status"] = "failed"
                    cell["error"] = f"{type(exc).__name__}: {exc}"
                cells.append(cell)
    return cells
