"""scikit-learn compatible wrappers.

These let the scoring pieces sit inside ordinary sklearn tooling
(``clone``, ``get_params``/``set_params``, pipelines, grid searches over
``threshold`` or ``epsilon``).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import CorpusInstance, Reference, RunConfig, evaluate_corpus
from .embed import EmbedderConfig, get_embedder
from .grpo import DEFAULT_EPSILON, normalize_advantages
from .metrics import DEFAULT_THRESHOLD, CorpusReport
from .reward import MODES, RewardBreakdown, as_reference_diagram, total_reward
from .exceptions import InputError
from .validation import check_reward_groups, check_same_length, check_texts


def _embedder_config(backend: str, dimension: int, endpoint, timeout_ms: int, batch_size: int):
    return EmbedderConfig(
        backend=backend,
        dimension=dimension,
        endpoint=endpoint,
        timeout_ms=timeout_ms,
        batch_size=batch_size,
    )


class TextEmbedder(TransformerMixin, BaseEstimator):
    """Map texts to rows of unit-norm embedding vectors.

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(self, backend="builtin", dimension=256, endpoint=None, timeout_ms=5000, batch_size=64):
        self.backend = backend
        self.dimension = dimension
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self.batch_size = batch_size

    def fit(self, X, y=None):
        self.config_ = _embedder_config(
            self.backend, self.dimension, self.endpoint, self.timeout_ms, self.batch_size
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        texts = check_texts(X)
        vectors = get_embedder(self.config_).embed(texts)
        self.n_features_out_ = vectors[0].dimension
        return np.vstack([v.values for v in vectors])


class AdvantageNormalizer(TransformerMixin, BaseEstimator):
    """Row-wise group-relative advantages for a (n_groups, G) reward array."""

    def __init__(self, epsilon=DEFAULT_EPSILON, ddof=0):
        self.epsilon = epsilon
        self.ddof = ddof

    def fit(self, X, y=None):
        check_reward_groups(X)
        return self

    def transform(self, X):
        groups = check_reward_groups(X)
        return np.array([normalize_advantages(row, self.epsilon, ddof=self.ddof) for row in groups])

    def _more_tags(self):
        return {"stateless": True}


class PlanRewardScorer(BaseEstimator):
    """Score predicted outputs against references.

    ``fit`` takes the references (PlantUML text in ``uml`` mode, plain
    text in ``text`` mode) and validates them; ``predict`` takes the raw
    model outputs aligned with those references and returns total
    rewards.
    """

    def __init__(
        self,
        mode="uml",
        threshold=DEFAULT_THRESHOLD,
        backend="builtin",
        dimension=256,
        endpoint=None,
        timeout_ms=5000,
        batch_size=64,
    ):
        self.mode = mode
        self.threshold = threshold
        self.backend = backend
        self.dimension = dimension
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self.batch_size = batch_size

    def fit(self, X, y=None):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        references = check_texts(X, "references")
        self.embedder_ = _embedder_config(
            self.backend, self.dimension, self.endpoint, self.timeout_ms, self.batch_size
        )
        self.run_config_ = RunConfig(embedder=self.embedder_, threshold=self.threshold, mode=self.mode)
        if self.mode == "uml":
            self.references_ = [as_reference_diagram(r) for r in references]
        else:
            self.references_ = references
        self.reference_texts_ = references
        self.n_references_ = len(references)
        return self

    def _aligned(self, X) -> list[str]:
        check_is_fitted(self, "references_")
        predictions = check_texts(X, "predictions")
        check_same_length(predictions, self.references_, "predictions and fitted references differ in length")
        return predictions

    def breakdowns(self, X) -> list[RewardBreakdown]:
        predictions = self._aligned(X)
        return [
            total_reward(p, r, self.mode, self.embedder_) for p, r in zip(predictions, self.references_)
        ]

    def transform(self, X):
        """Columns: format reward, accuracy reward, total."""
        rows = [(b.format_reward, b.accuracy_reward, b.total) for b in self.breakdowns(X)]
        return np.array(rows, dtype=np.float64)

    def predict(self, X):
        return self.transform(X)[:, 2]

    def score(self, X, y=None):
        """Mean total reward."""
        return float(np.mean(self.predict(X)))

    def evaluate(self, X, ids=None) -> CorpusReport:
        predictions = self._aligned(X)
        ids = [f"{i:06d}" for i in range(len(predictions))] if ids is None else [str(i) for i in ids]
        check_same_length(ids, predictions, "ids and predictions differ in length")
        instances = [
            CorpusInstance(
                i,
                Reference(self.mode, text),
                pred,
                diagram=ref if self.mode == "uml" else None,
            )
            for i, text, pred, ref in zip(ids, self.reference_texts_, predictions, self.references_)
        ]
        return evaluate_corpus(instances, self.run_config_)
