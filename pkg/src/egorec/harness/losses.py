"""Composite objective bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

from ..diffcore import Tensor
from .config import TrainConfig


@dataclass
class LossBundle:
    """Per-batch loss components; ``l_final`` is their weighted sum."""

    l_cls: float = 0.0
    l_seg: float = 0.0
    l_rec: float = 0.0
    l_smooth: float = 0.0
    l_final: float = 0.0


def total_loss(config: TrainConfig, l_cls, l_seg, l_rec, l_smooth):
    """Weighted sum of the four components as a recorded scalar.

    Inputs are scalar Tensors (or None for absent components, which count
    as zero); returns (total Tensor, LossBundle of floats for logging).
    """
    total = None
    vals = {}
    for name, term, weight in (("l_cls", l_cls, 1.0), ("l_seg", l_seg, config.alpha),
                               ("l_rec", l_rec, config.beta), ("l_smooth", l_smooth, config.gamma)):
        if term is None:
            vals[name] = 0.0
            continue
        vals[name] = term.item()
        weighted = term if weight == 1.0 else term * weight
        total = weighted if total is None else total + weighted
    if total is None:
        raise ValueError("total_loss needs at least one component")
    bundle = LossBundle(**vals, l_final=(vals["l_cls"] + config.alpha * vals["l_seg"]
                                         + config.beta * vals["l_rec"]
                                         + config.gamma * vals["l_smooth"]))
    return total, bundle
