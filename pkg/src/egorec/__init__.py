"""Egocentric two-person interaction recognition at desk scale.

Subpackages: ``diffcore`` (tensor engine), ``backbone``, ``attention``,
``motion``, ``interact`` (model components), ``synthdata`` (synthetic clip
generator and on-disk format), ``harness`` (losses, training, ablations,
checkpoints, CLI).
"""

__version__ = "0.1.0"
