"""Feature attribution along transfer-attack trajectories."""

from .attribution import (
    AttackTrace,
    AttributionMap,
    IntegratedGradients,
    PathAttribution,
    RandomAttribution,
    SaliencyMap,
    attribute_path,
    integrated_gradients,
    random_attribution,
    saliency_map,
)
from .data import Dataset, SyntheticSpec, load_dataset, synthetic_blobs
from .evaluation import EvalCurve, aggregate, auc, deletion_curve, insertion_curve
from .model import ModelSpec, Network, SoftmaxClassifier, Weights, load_network, save_network
from .numerics import Rng
from .strategies import STRATEGIES, AttackConfig, AttackState, get_strategy

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackState", "AttackTrace", "AttributionMap", "Dataset", "EvalCurve",
    "IntegratedGradients", "ModelSpec", "Network", "PathAttribution", "RandomAttribution",
    "Rng", "STRATEGIES", "SaliencyMap", "SoftmaxClassifier", "SyntheticSpec", "Weights",
    "aggregate", "attribute_path", "auc", "deletion_curve", "get_strategy", "insertion_curve",
    "integrated_gradients", "load_dataset", "load_network", "random_attribution",
    "saliency_map", "save_network", "synthetic_blobs",
]
