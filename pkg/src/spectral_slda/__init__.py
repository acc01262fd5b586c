"""Method-of-moments recovery of supervised LDA models."""

__version__ = "0.1.0"

from .model import (Corpus, Document, SldaModel, dirichlet_moments,  # noqa: E402
                    generate_corpus, population_joint_moments,
                    population_moments, random_model)
from .recovery import (RecoveredModel, RecoveryConfig, recover,  # noqa: E402
                       recover_joint, recover_two_stage)

__all__ = [
    "Corpus", "Document", "SldaModel", "dirichlet_moments", "generate_corpus",
    "population_joint_moments", "population_moments", "random_model",
    "RecoveredModel", "RecoveryConfig", "recover", "recover_joint",
    "recover_two_stage",
]
