"""Finite-difference verification suite covering every objective family.

Each case draws a small random network (widths <= 16, C <= 5, batch <= 8,
64-bit) and compares the analytic backward pass against central
differences. Cases whose rectifier pre-activations sit within the
finite-difference window of zero are redrawn: the central-difference
oracle is only valid away from the kink, and the margin keeps it there.
"""

from dataclasses import dataclass

import numpy as np

from .nn import (
    build_network,
    finite_difference_gradient,
    max_relative_error,
    network_backward,
    network_forward,
)
from .objectives import ObjectiveConfig, SatTargetStore, objective_dispatch
from .util import rng_for

TOLERANCE = 1e-5
FD_EPS = 1e-6
# pre-activations must sit at least this far from the rectifier kink for
# the central-difference oracle to be trustworthy
KINK_MARGIN = 1e-4


def suite_objectives() -> list:
    """(report name, config) pairs for the five objective families."""
    return [
        ("CE", ObjectiveConfig(kind="CE")),
        ("CE+EM", ObjectiveConfig(kind="CE+EM", beta=0.01)),
        ("DG", ObjectiveConfig(kind="DG")),
        ("DG+EM", ObjectiveConfig(kind="DG+EM", beta=0.05)),
        ("SAT", ObjectiveConfig(kind="SAT", sat_pretrain_epochs=0)),
        ("SAT+EM", ObjectiveConfig(kind="SAT+EM", sat_pretrain_epochs=0,
                                   beta=0.05)),
        ("SelectiveNet[hinge]",
         ObjectiveConfig(kind="SelectiveNet", coverage_penalty="hinge",
                         c_target=0.9, lam=4.0, alpha_mix=0.6)),
        ("SelectiveNet[symmetric]",
         ObjectiveConfig(kind="SelectiveNet", coverage_penalty="symmetric",
                         c_target=0.8, lam=4.0, alpha_mix=0.6)),
        ("SelectiveNet+EM",
         ObjectiveConfig(kind="SelectiveNet+EM", beta=0.05, c_target=0.9,
                         lam=4.0, alpha_mix=0.6)),
    ]


@dataclass
class GradcheckCase:
    net: object
    X: np.ndarray
    y: np.ndarray
    store: SatTargetStore | None
    cfg: ObjectiveConfig
    n_classes: int


def _draw_case(cfg: ObjectiveConfig, seed: int, case_index: int) -> GradcheckCase:
    for attempt in range(64):
        rng = rng_for(seed, f"gradcheck:{cfg.kind}:{cfg.coverage_penalty}:"
                            f"{case_index}:{attempt}")
        n_classes = int(rng.integers(2, 6))
        widths = tuple(int(w) for w in rng.integers(3, 17, size=2))
        m = int(rng.integers(1, 9))
        input_dim = int(rng.integers(2, 7))
        net = build_network(input_dim, widths, n_classes=n_classes,
                            head=cfg.required_head(),
                            seed=int(rng.integers(0, 2 ** 31)))
        for arr in net.param_arrays():
            arr += rng.normal(scale=0.3, size=arr.shape)
        X = rng.normal(size=(m, input_dim))
        y = rng.integers(0, n_classes, size=m)
        trace = network_forward(net, X)
        if min(float(np.abs(z).min()) for z in trace.pre) < KINK_MARGIN:
            continue
        if cfg.base_kind == "SelectiveNet" and \
                abs(float(trace.g_sel.mean()) - cfg.c_target) < KINK_MARGIN:
            continue  # the hinge has its own kink at the target coverage
        store = None
        if cfg.base_kind == "SAT":
            store = SatTargetStore.initialize(y, n_classes, pretrain_epochs=0)
            raw = rng.random((m, n_classes + 1))
            store.targets = raw / raw.sum(axis=1, keepdims=True)
        return GradcheckCase(net=net, X=X, y=y, store=store, cfg=cfg,
                             n_classes=n_classes)
    raise RuntimeError("could not draw a kink-free gradcheck case")


def check_case(case: GradcheckCase, eps: float = FD_EPS,
               corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients."""
    cfg, net = case.cfg, case.net

    def lossfn(n):
        t = network_forward(n, case.X)
        return objective_dispatch(cfg, t.head_raw, case.y,
                                  n_classes=case.n_classes, store=case.store,
                                  sample_ids=np.arange(len(case.y)),
                                  epoch=0).loss

    trace = network_forward(net, case.X)
    res = objective_dispatch(cfg, trace.head_raw, case.y,
                             n_classes=case.n_classes, store=case.store,
                             sample_ids=np.arange(len(case.y)), epoch=0)
    if corrupt:
        res.dlogits["logits"] = res.dlogits["logits"] + 0.05
    analytic = network_backward(net, trace, res.dlogits)
    fd = finite_difference_gradient(lossfn, net, eps=eps)
    return max_relative_error(analytic, fd)


def check_objective(cfg: ObjectiveConfig, n_cases: int = 20, seed: int = 0,
                    corrupt: bool = False) -> float:
    worst = 0.0
    for i in range(n_cases):
        case = _draw_case(cfg, seed, i)
        worst = max(worst, check_case(case, corrupt=corrupt))
    return worst


def run_suite(n_cases: int = 20, seed: int = 0, corrupt: str | None = None) -> dict:
    """Per-objective max relative error; ``corrupt`` names an objective
    whose analytic gradient is deliberately broken (fault-injection)."""
    results = {}
    for name, cfg in suite_objectives():
        results[name] = check_objective(cfg, n_cases=n_cases, seed=seed,
                                        corrupt=(name == corrupt))
    return results
