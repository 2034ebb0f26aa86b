"""Epinet-based Thompson sampling for content cold start, at desk scale.

Subpackages and modules:

- ``nn_core``: dense networks with hand-derived gradients, initializers,
  optimizers, stable losses, and seeded random streams.
- ``enn``: epistemic neural networks (point estimate, MC dropout, deep
  ensemble, epinet with a frozen prior network).
- ``retrieval_model``: two-tower user/item model with an epinet overarch
  and the combined embedding + overarch training loss.
- ``agents``: bandit policies (epinet Thompson sampling, greedy point
  estimate, epsilon-greedy, ensemble Thompson sampling).
- ``env_sim``: non-stationary cold-start content simulator with hidden
  ground truth and engagement label formulas.
- ``harness``: experiment configuration, multi-seed A/B runner, bucketed
  metrics, arm comparison, charts, and the command-line interface.
"""

__version__ = "0.1.0"

from .errors import (
    AnalysisError,
    CheckpointError,
    ConfigError,
    NumericalError,
    SimError,
    StateError,
)

__all__ = [
    "AnalysisError",
    "CheckpointError",
    "ConfigError",
    "NumericalError",
    "SimError",
    "StateError",
    "__version__",
]
