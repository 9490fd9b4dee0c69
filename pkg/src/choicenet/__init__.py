"""Transformer-based choice prediction: single, sequential, and multi-choice.

Submodules:

* ``tensor``    minimal reverse-mode autodiff over dense float64 arrays
* ``data``      datasets, reductions, synthetic generators, batching
* ``model``     the two-encoder attention network and its checkpoints
* ``training``  losses, Adam, Xavier init, training and grid search
* ``inference`` prediction, basket generation, metrics, attention export
* ``oracle``    exact tabular models, permutation sums, Mobius inversion,
                and the constructive network used as ground truth
"""

from .tensor import Tensor
from .data import ChoiceDataset, ChoiceObservation, ItemCatalog
from .model import TCNetConfig, forward, init_params

__all__ = [
    "Tensor",
    "ChoiceDataset",
    "ChoiceObservation",
    "ItemCatalog",
    "TCNetConfig",
    "forward",
    "init_params",
]
