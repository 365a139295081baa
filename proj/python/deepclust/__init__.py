"""Deep embedded clustering: CAE-MLE and deep inverse feature learning."""

from ._core import (
    acc,
    agglomerate,
    cae_mle,
    deep_ifl,
    hard_labels,
    kmeans,
    make_synthetic_blobs,
    nmi,
    soft_assign,
    target_distribution,
)

__all__ = [
    "acc",
    "agglomerate",
    "cae_mle",
    "deep_ifl",
    "hard_labels",
    "kmeans",
    "make_synthetic_blobs",
    "nmi",
    "soft_assign",
    "target_distribution",
]

__version__ = "0.1.0"
