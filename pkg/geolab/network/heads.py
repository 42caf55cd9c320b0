"""
GeoLab - Prediction Heads
Coarse relation (bilinear) head, pair feature extractor, relation feature enhancer,
direction, collinearity, SER and masked-token heads.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from geolab.models.geometry import NUM_COLLINEAR_CLASSES, NUM_DIRECTIONS
from geolab.models.labels import SER_TAGS
from geolab.nn import ops
from geolab.nn.layers import CrossAttentionDecoderLayer, EncoderLayer, Linear
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor
from geolab.utils.errors import DimensionError

logger = logging.getLogger(__name__)

POSITIVE_THRESHOLD = 0.5


@dataclass
class RelationMatrix:
    """probs[i, j] = probability that segment j is the father of segment i"""
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.probs.shape[1]:
            raise DimensionError('RelationMatrix', self.probs.shape, (self.probs.shape[0],) * 2)
        if self.probs.size and (self.probs.min() < 0.0 or self.probs.max() > 1.0):
            raise ValueError("relation probabilities must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.probs.shape[0]


class CoarseRelationHead:
    """sigmoid(B_i^T W B_j + b); the same weights score nearest-in-direction pairs in pre-training"""

    def __init__(self, store: ParameterStore, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = store.create('crp.W', (dim, dim), rng, std=std)
        self.bias = store.create('crp.b', (1,), init='zeros')

    def logits(self, features: Tensor) -> Tensor:
        return ops.add(ops.bilinear_form(features, self.weight, features), self.bias)

    def logits_at(self, features: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
        """Scores of the listed (row, col) pairs only -> [P]"""
        left = ops.matmul(ops.take(features, rows, axis=0), self.weight)
        right = ops.take(features, cols, axis=0)
        return ops.add(ops.sum(ops.mul(left, right), axis=-1), self.bias)

    def __call__(self, features: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(features))

    def relation_matrix(self, features: Tensor) -> RelationMatrix:
        return RelationMatrix(self(features).data)


class PairFeatureExtractor:
    """F[i, j] = [B_i, B_j] W + b, with W split by rows for the full grid"""

    def __init__(self, store: ParameterStore, dim: int, relation_dim: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.dim = dim
        self.relation_dim = relation_dim
        self.weight = store.create('pair.W', (2 * dim, relation_dim), rng, std=std)
        self.bias = store.create('pair.b', (relation_dim,), init='zeros')

    def __call__(self, features: Tensor) -> Tensor:
        n = features.shape[0]
        top = ops.take(self.weight, np.arange(self.dim), axis=0)
        bottom = ops.take(self.weight, np.arange(self.dim, 2 * self.dim), axis=0)
        as_son = ops.reshape(ops.matmul(features, top), (n, 1, self.relation_dim))
        as_father = ops.reshape(ops.matmul(features, bottom), (1, n, self.relation_dim))
        return ops.add(ops.add(as_son, as_father), self.bias)

    def at(self, features: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
        pairs = ops.concat([ops.take(features, rows, axis=0), ops.take(features, cols, axis=0)], axis=-1)
        return ops.affine(pairs, self.weight, self.bias)


class RelationFeatureEnhancer:
    """Encoder layer over the positive pair set, cross-attention-only decoder over the queries"""

    def __init__(self, store: ParameterStore, relation_dim: int, heads: int, ffn: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.encoder = EncoderLayer(store, 'rfe.enc', relation_dim, heads, ffn, rng, std)
        self.decoder = CrossAttentionDecoderLayer(store, 'rfe.dec', relation_dim, heads, ffn, rng, std)
        self.out = Linear(store, 'rfe.out', relation_dim, 1, rng, std)

    def logits(self, positive: Tensor, queries: Tensor) -> Tensor:
        if positive.shape[0] == 0:
            raise DimensionError('rfe', positive.shape, queries.shape)
        memory = self.encoder(positive)
        decoded = self.decoder(queries, memory)
        return ops.reshape(self.out(decoded), (queries.shape[0],))

    def __call__(self, positive: Tensor, queries: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(positive, queries))


def select_positive_pairs(r0: np.ndarray, cap: int = 128) -> np.ndarray:
    """Flat indices i*n+j of off-diagonal pairs with r0 > 0.5, highest first, at most `cap`

    Falls back to the single highest off-diagonal pair when none pass the threshold.
    """
    n = r0.shape[0]
    scores = np.array(r0, dtype=np.float64)
    if n > 1:
        np.fill_diagonal(scores, -np.inf)
    flat = scores.reshape(-1)
    # stable sort keeps the smaller flat index first among equal scores
    order = np.argsort(-flat, kind='stable')
    positives = order[flat[order] > POSITIVE_THRESHOLD][:cap]
    if positives.size == 0:
        positives = order[:1]
    return positives.astype(np.int64)


def refine_relations(pair_head: PairFeatureExtractor, rfe: RelationFeatureEnhancer, features: Tensor,
                     r0: np.ndarray, cap: int = 128) -> Tuple[Tensor, np.ndarray]:
    """r1 logits [n, n] from the RFE over all pairs, conditioned on the r0-selected positives"""
    n = features.shape[0]
    grid = ops.reshape(pair_head(features), (n * n, pair_head.relation_dim))
    positives = select_positive_pairs(r0, cap)
    logits = rfe.logits(ops.take(grid, positives, axis=0), grid)
    return ops.reshape(logits, (n, n)), positives


class DirectionHead:
    """Softmax(Linear([B_i, B_j])) over the nine directions"""

    def __init__(self, store: ParameterStore, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.linear = Linear(store, 'direction', 2 * dim, NUM_DIRECTIONS, rng, std)

    def logits(self, features: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
        pairs = ops.concat([ops.take(features, rows, axis=0), ops.take(features, cols, axis=0)], axis=-1)
        return self.linear(pairs)

    def __call__(self, features: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
        return ops.softmax(self.logits(features, rows, cols), axis=-1)


class CollinearityHead:
    """Softmax(Linear(B_i + B_j + B_k)); the sum runs in sorted index order"""

    def __init__(self, store: ParameterStore, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.linear = Linear(store, 'cit', dim, NUM_COLLINEAR_CLASSES, rng, std)

    def logits(self, features: Tensor, triplets: np.ndarray) -> Tensor:
        triplets = np.sort(np.asarray(triplets, dtype=np.int64).reshape(-1, 3), axis=1)
        summed = ops.add(ops.add(ops.take(features, triplets[:, 0], axis=0),
                                 ops.take(features, triplets[:, 1], axis=0)),
                         ops.take(features, triplets[:, 2], axis=0))
        return self.linear(summed)

    def __call__(self, features: Tensor, triplets: np.ndarray) -> Tensor:
        return ops.softmax(self.logits(features, triplets), axis=-1)


class SerHead:
    """Two-layer MLP over token features -> BIO tags"""

    def __init__(self, store: ParameterStore, dim: int, hidden: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.hidden = Linear(store, 'ser.hidden', dim, hidden, rng, std)
        self.out = Linear(store, 'ser.out', hidden, len(SER_TAGS), rng, std)

    def logits(self, token_features: Tensor) -> Tensor:
        return self.out(ops.gelu(self.hidden(token_features)))

    def __call__(self, token_features: Tensor) -> Tensor:
        return ops.softmax(self.logits(token_features), axis=-1)


class MvlmHead:
    def __init__(self, store: ParameterStore, dim: int, vocab_size: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.linear = Linear(store, 'mvlm', dim, vocab_size, rng, std)

    def logits(self, token_features: Tensor, positions: Optional[Sequence[int]] = None) -> Tensor:
        if positions is not None:
            token_features = ops.take(token_features, positions, axis=0)
        return self.linear(token_features)

    def __call__(self, token_features: Tensor, positions: Optional[Sequence[int]] = None) -> Tensor:
        return ops.softmax(self.logits(token_features, positions), axis=-1)
