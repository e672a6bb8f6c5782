"""Ensemble selection with UMDA, classifier diversity, and metric-learning loss kernels."""

from .diversity import DiversityMatrix, RelationshipCounts, correlation_coefficient, diversity_matrix, relationship
from .fusion import ensemble_accuracy, majority_vote
from .pool import PredictionTable, classifier_accuracy, load_prediction_table, save_prediction_table
from .umda import UmdaConfig, ensemble_fitness, run

__version__ = "0.1.0"
