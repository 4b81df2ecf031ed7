"""Soft selection scores: one real number per sample, higher = keep.

Four interchangeable mechanisms:

    softmax_response   max class probability of the classifier
    negative_entropy   -H(class probabilities)
    abstention_logit   1 - p(abstain), for C+1 heads
    selection_head     the dedicated sigmoid unit of three-head models

For abstain-head models, softmax response and negative entropy first drop
the abstain entry and renormalize over the C real classes, implemented as
the softmax of the first C raw logits (the algebraically identical, and
numerically safer, form). Samples whose abstain probability is exactly 1
in floating point are flagged degenerate and scored -inf, so a finite
threshold never selects them.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import stable_softmax
from .objectives import predictive_entropy

MECHANISM_KINDS = (
    "softmax_response", "negative_entropy", "abstention_logit", "selection_head",
)


@dataclass(frozen=True)
class SelectionMechanism:
    """A scoring rule plus the renormalization switch for abstain heads.

    ``renormalize=False`` is an ablation: softmax response then reads the
    raw C-class mass out of the (C+1)-way softmax without renormalizing.
    """

    kind: str
    renormalize: bool = True

    def __post_init__(self):
        if self.kind not in MECHANISM_KINDS:
            raise ConfigurationError(
                f"unknown selection mechanism {self.kind!r}")


@dataclass
class ProbOutput:
    """Prediction-head softmax plus retained raw logits for one batch."""

    logits: np.ndarray            # (m, C) or (m, C+1)
    probs: np.ndarray             # softmax(logits), same shape
    n_classes: int
    has_abstain: bool
    g_sel: np.ndarray | None = None

    @classmethod
    def from_trace(cls, net, trace):
        logits = trace.head_raw["logits"]
        return cls(logits=logits, probs=stable_softmax(logits),
                   n_classes=net.n_classes, has_abstain=net.has_abstain,
                   g_sel=trace.g_sel)


def predict_classes(output: ProbOutput) -> np.ndarray:
    """Argmax over the C real classes (abstain entry never predicted)."""
    return np.argmax(output.probs[:, :output.n_classes], axis=1)


def score_softmax_response(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    return p.max(axis=-1)


def score_negative_entropy(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.clip(p, 1e-300, None))
    h = -np.where(p > 0, p * logp, 0.0).sum(axis=-1)
    return -h


def score_abstention_logit(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 3:
        raise ConfigurationError(
            "abstention score needs C+1 >= 3 probability entries")
    return 1.0 - p[..., -1]


def score_selection_head(g_sel) -> np.ndarray | float:
    return np.asarray(g_sel, dtype=np.float64)


def drop_abstain_and_renormalize(p):
    """Renormalize a (C+1)-way distribution over the C real classes.

    Returns (q, degenerate) where degenerate marks rows with all mass on
    the abstain entry; those rows of q are NaN and must not be consumed.
    """
    p = np.asarray(p, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
    abstain = p[:, -1]
    degenerate = abstain >= 1.0
    remaining = 1.0 - abstain
    q = np.full_like(p[:, :-1], np.nan)
    ok = ~degenerate
    q[ok] = p[ok, :-1] / remaining[ok, None]
    if squeeze:
        return q[0], bool(degenerate[0])
    return q, degenerate


def class_probabilities(output: ProbOutput, renormalize: bool = True):
    """C-way class distribution for scoring, plus the degenerate mask.

    Abstain heads renormalize by re-softmaxing the first C raw logits,
    which equals dividing the probabilities by (1 - p_abstain) but cannot
    lose precision when the abstain mass dominates.
    """
    m = output.probs.shape[0]
    if not output.has_abstain:
        return output.probs[:, :output.n_classes], np.zeros(m, dtype=bool)
    degenerate = output.probs[:, -1] >= 1.0
    if not renormalize:
        return output.probs[:, :output.n_classes], degenerate
    return stable_softmax(output.logits[:, :output.n_classes]), degenerate


def score_batch(mechanism: SelectionMechanism, output: ProbOutput) -> np.ndarray:
    """One selectability score per sample; sample order preserved."""
    kind = mechanism.kind
    if kind == "softmax_response":
        q, degenerate = class_probabilities(output, mechanism.renormalize)
        scores = q.max(axis=1)
        scores[degenerate] = -np.inf
        return scores
    if kind == "negative_entropy":
        q, degenerate = class_probabilities(output, renormalize=True)
        scores = np.where(degenerate, -np.inf, score_negative_entropy(
            np.where(degenerate[:, None], 1.0 / output.n_classes, q)))
        return scores
    if kind == "abstention_logit":
        if not output.has_abstain:
            raise ConfigurationError(
                "abstention_logit needs a C+1 head; this model has none")
        return score_abstention_logit(output.probs)
    if kind == "selection_head":
        if output.g_sel is None:
            raise ConfigurationError(
                "selection_head needs a three-head model; this model has none")
        return score_selection_head(output.g_sel)
    raise ConfigurationError(f"unknown selection mechanism {kind!r}")


def mechanism_compatible(kind: str, head: str) -> bool:
    if kind in ("softmax_response", "negative_entropy"):
        return True
    if kind == "abstention_logit":
        return head == "abstain"
    if kind == "selection_head":
        return head == "selectivenet"
    return False


def scores_to_csv(path, scores, predicted, truth, header_comment: str = "") -> None:
    scores = np.asarray(scores)
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        w = csv.writer(f)
        w.writerow(["sample_id", "score", "predicted_class", "true_class"])
        for i, (s, p, t) in enumerate(zip(scores, predicted, truth)):
            w.writerow([i, repr(float(s)), int(p), int(t)])
