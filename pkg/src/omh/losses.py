"""Training objectives with analytic gradients.

Every loss returns a :class:`LossValue` whose ``gradients`` map names to
arrays shaped like the corresponding input. Names are chosen by the caller
(``keys=`` arguments), so gradients of different terms that touch the same
tensor merge when the terms are summed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidConfig
from .hierarchy import transported_activation, transported_activation_backward
from .linalg import as_matrix, col_onehot_argmax, cosine_sim, cosine_sim_backward, cosine_sim_plus


@dataclass
class LossValue:
    value: float
    gradients: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise FloatingPointError(f"loss value is not finite: {self.value}")

    def scaled(self, w):
        return LossValue(w * self.value, {k: w * g for k, g in self.gradients.items()})

    def __add__(self, other):
        grads = {k: g.copy() for k, g in self.gradients.items()}
        for k, g in other.gradients.items():
            if k in grads:
                if grads[k].shape != g.shape:
                    raise DimensionMismatch(f"gradient {k!r}: {grads[k].shape} vs {g.shape}")
                grads[k] = grads[k] + g
            else:
                grads[k] = g.copy()
        return LossValue(self.value + other.value, grads)


@dataclass(frozen=True)
class LossWeights:
    sparsity_weight: float = 0.01
    structure_weight: float = 0.3
    distill_b: float = 0.5

    def __post_init__(self):
        if self.sparsity_weight < 0 or self.structure_weight < 0:
            raise InvalidConfig("loss weights must be non-negative")


def distill_loss(f_enc_x, f_enc_y, f_x, f_y, b=0.5, keys=("f_x", "f_y")):
    """Correlation distillation between encoder and projected features.

    ``-sum_pq (cos(enc_x, enc_y) - b) * max(cos(f_x, f_y), 0)``. Encoder
    features are constants; gradients are returned for ``f_x`` and ``f_y``.
    """
    f_enc_x, f_enc_y = as_matrix(f_enc_x, "f_enc_x"), as_matrix(f_enc_y, "f_enc_y")
    f_x, f_y = as_matrix(f_x, "f_x"), as_matrix(f_y, "f_y")
    if f_enc_x.shape[0] != f_x.shape[0] or f_enc_y.shape[0] != f_y.shape[0]:
        raise DimensionMismatch("encoder and projected features disagree on location count")
    target = cosine_sim(f_enc_x, f_enc_y) - b
    value = -np.sum(target * cosine_sim_plus(f_x, f_y))
    gx, gy = cosine_sim_backward(f_x, f_y, -target, clip=True)
    return LossValue(value, {keys[0]: gx, keys[1]: gy})


def cluster_loss(m, key="m"):
    """``-<M, onehot(argmax_k M)>``: minus the sum of per-column maxima.

    The hard assignment is held constant, so the gradient is ``-onehot``.
    """
    m = as_matrix(m, "m")
    hard = col_onehot_argmax(m)
    return LossValue(-np.sum(hard * m), {key: -hard})


def match_loss(m_coarse, transported, keys=("m_coarse", "transported")):
    """L1 distance between coarse activations and transported fine activations.

    The subgradient of ``|x|`` at 0 is taken as 0.
    """
    m_coarse = as_matrix(m_coarse, "m_coarse")
    transported = as_matrix(transported, "transported")
    if m_coarse.shape != transported.shape:
        raise DimensionMismatch(f"{m_coarse.shape} vs {transported.shape}")
    diff = transported - m_coarse
    sign = np.sign(diff)
    return LossValue(np.sum(np.abs(diff)), {keys[0]: -sign, keys[1]: sign})


def hierarchy_match_loss(plan, m_coarse, m_fine, keys=("m_coarse", "m_fine")):
    """Matching loss between two levels, with the gradient routed through the max-pool."""
    t = transported_activation(plan, m_fine)
    lv = match_loss(m_coarse, t, keys=(keys[0], "_transported"))
    g_fine = transported_activation_backward(plan, m_fine, lv.gradients["_transported"])
    return LossValue(lv.value, {keys[0]: lv.gradients[keys[0]], keys[1]: g_fine})


def total_loss(base, cluster_terms, match_terms, w):
    """``base + sparsity * sum(cluster) + structure * sum(match)``."""
    out = LossValue(base.value, {k: g.copy() for k, g in base.gradients.items()})
    for t in cluster_terms:
        out = out + t.scaled(w.sparsity_weight)
    for t in match_terms:
        out = out + t.scaled(w.structure_weight)
    return out
