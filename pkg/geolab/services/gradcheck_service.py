"""
GeoLab - Gradient Check Service
Float64 finite-difference verification of every layer, head and loss
"""
import logging
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from geolab.models.document import Document, TextSegment, Vocabulary, Word
from geolab.models.geometry import BBox
from geolab.models.labels import SER_TAGS
from geolab.models.metrics import MetricsReport
from geolab.network.encoder import LayoutEncoder
from geolab.network.heads import (CoarseRelationHead, CollinearityHead, DirectionHead, MvlmHead,
                                  PairFeatureExtractor, RelationFeatureEnhancer, SerHead)
from geolab.nn import ops
from geolab.nn.gradcheck import grad_check
from geolab.nn.layers import CrossAttentionDecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor, default_dtype
from geolab.services.finetune_service import father_variance
from geolab.utils.helpers import rng_stream

logger = logging.getLogger(__name__)

DIM, REL_DIM, HEADS, FFN, N = 8, 8, 2, 12, 4
# larger than the training init so products do not vanish below the error floor
CHECK_STD = 0.5

Check = Tuple[Callable[[], Tensor], List[Tensor]]


def _leaf(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True, dtype=np.float64)


def _projected(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return lambda t: ops.sum(ops.mul(t, weights))


def _with_projection(forward: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """Scalar loss sum(forward() * R) for a fixed random R"""
    project = _projected(forward(), rng)
    return lambda: project(forward())


def _params(store: ParameterStore) -> List[Tensor]:
    return [tensor for _, tensor in store.items()]


def _tiny_document() -> Document:
    def segment(k, text, x, y):
        words = tuple(Word(w, BBox(x + 40 * i, y, x + 40 * i + 30, y + 12)) for i, w in enumerate(text.split()))
        return TextSegment(k, words, 'question' if k % 2 else 'answer')
    segments = (segment(0, 'alpha beta', 10, 10), segment(1, 'gamma', 200, 10), segment(2, 'beta delta x', 10, 60))
    return Document('grad-check', segments, frozenset({(1, 0)}))


def build_checks(seed: int = 0) -> Dict[str, Check]:
    """name -> (scalar fn, inputs); parameters and layer inputs are both checked"""
    rng = rng_stream(seed, 41)
    checks: Dict[str, Check] = {}

    def layer(name: str, build, call):
        store = ParameterStore(np.float64)
        module = build(store)
        x = _leaf(rng, N, DIM)
        checks[name] = (_with_projection(lambda: call(module, x), rng), [x, *_params(store)])

    # primitives that the layers do not reach directly
    logits, targets = _leaf(rng, N, 5), rng.integers(0, 5, size=N)
    checks['op.cross_entropy'] = (lambda: ops.cross_entropy(logits, targets), [logits])
    z, labels, weights = _leaf(rng, N, N), rng.integers(0, 2, size=(N, N)), 1.0 - np.eye(N)
    checks['op.bce_with_logits'] = (lambda: ops.binary_cross_entropy_with_logits(z, labels, weights), [z])
    v = _leaf(rng, N, 3)
    checks['op.variance'] = (_with_projection(lambda: ops.variance(v, axis=-1), rng), [v])
    s = _leaf(rng, N, 6)
    checks['op.softmax'] = (_with_projection(lambda: ops.softmax(s, axis=-1), rng), [s])
    checks['op.log_softmax'] = (_with_projection(lambda: ops.log_softmax(s, axis=-1), rng), [s])
    g = _leaf(rng, N, 6)
    checks['op.gelu'] = (_with_projection(lambda: ops.gelu(g), rng), [g])
    bx, bw = _leaf(rng, N, DIM), _leaf(rng, DIM, DIM)
    checks['op.bilinear_form'] = (_with_projection(lambda: ops.bilinear_form(bx, bw, bx), rng), [bx, bw])
    sg = _leaf(rng, N, 5)
    checks['op.sigmoid'] = (_with_projection(lambda: ops.sigmoid(sg), rng), [sg])
    checks['op.mean'] = (_with_projection(lambda: ops.mean(sg, axis=0), rng), [sg])
    checks['op.mean_all'] = (lambda: ops.mean(ops.mul(sg, sg)), [sg])
    ca, cb = _leaf(rng, N, 3), _leaf(rng, N, 5)
    checks['op.concat'] = (_with_projection(lambda: ops.concat([ca, cb], axis=-1), rng), [ca, cb])
    aq, am = _leaf(rng, 2, DIM), _leaf(rng, N, DIM)
    attention = [_leaf(rng, *((DIM, DIM) if k % 2 == 0 else (DIM,)), scale=CHECK_STD) for k in range(8)]
    key_mask = np.array([True, False, True, True])
    checks['op.attention'] = (_with_projection(lambda: ops.multi_head_attention(aq, am, *attention, HEADS, key_mask),
                                               rng), [aq, am, *attention])

    layer('layer.linear', lambda st: Linear(st, 'lin', DIM, 5, rng, CHECK_STD), lambda m, x: m(x))
    layer('layer.layer_norm', lambda st: LayerNorm(st, 'ln', DIM), lambda m, x: m(x))
    layer('layer.feed_forward', lambda st: FeedForward(st, 'ffn', DIM, FFN, rng, CHECK_STD), lambda m, x: m(x))
    mask = np.array([True, True, False, True])
    layer('layer.encoder', lambda st: EncoderLayer(st, 'enc', DIM, HEADS, FFN, rng, CHECK_STD),
          lambda m, x: m(x, mask))
    memory = _leaf(rng, 3, DIM)
    store = ParameterStore(np.float64)
    decoder = CrossAttentionDecoderLayer(store, 'dec', DIM, HEADS, FFN, rng, CHECK_STD)
    query = _leaf(rng, N, DIM)
    checks['layer.cross_attention_decoder'] = (_with_projection(lambda: decoder(query, memory), rng),
                                               [query, memory, *_params(store)])

    # heads, each through the loss it is trained with
    features = _leaf(rng, N, DIM)
    rows, cols = np.array([0, 1, 2, 3, 1]), np.array([1, 2, 3, 0, 3])

    store = ParameterStore(np.float64)
    crp = CoarseRelationHead(store, DIM, rng, CHECK_STD)
    gold = rng.integers(0, 2, size=(N, N))
    checks['head.crp'] = (lambda: ops.binary_cross_entropy_with_logits(crp.logits(features), gold, 1.0 - np.eye(N)),
                          [features, *_params(store)])
    nearest = rng.integers(0, 2, size=rows.size)
    checks['head.crp_pairs'] = (lambda: ops.binary_cross_entropy_with_logits(crp.logits_at(features, rows, cols),
                                                                             nearest), [features, *_params(store)])

    # fine-tuning father-variance term: son 2 has two gold fathers, son 3 has three
    relation_logits = _leaf(rng, N, N)
    fathers = np.zeros((N, N))
    fathers[1, 0] = fathers[2, [0, 1]] = fathers[3, [0, 1, 2]] = 1.0
    checks['loss.variance'] = (lambda: father_variance(ops.sigmoid(relation_logits), fathers), [relation_logits])

    store = ParameterStore(np.float64)
    pair = PairFeatureExtractor(store, DIM, REL_DIM, rng, CHECK_STD)
    checks['head.pair_grid'] = (_with_projection(lambda: pair(features), rng), [features, *_params(store)])
    checks['head.pair_at'] = (_with_projection(lambda: pair.at(features, rows, cols), rng),
                              [features, *_params(store)])

    store = ParameterStore(np.float64)
    rfe = RelationFeatureEnhancer(store, REL_DIM, HEADS, FFN, rng, CHECK_STD)
    positive, queries = _leaf(rng, 3, REL_DIM), _leaf(rng, 5, REL_DIM)
    rfe_labels = rng.integers(0, 2, size=5)
    checks['head.rfe'] = (lambda: ops.binary_cross_entropy_with_logits(rfe.logits(positive, queries), rfe_labels),
                          [positive, queries, *_params(store)])

    store = ParameterStore(np.float64)
    direction = DirectionHead(store, DIM, rng, CHECK_STD)
    direction_targets = rng.integers(0, 9, size=rows.size)
    checks['head.direction'] = (lambda: ops.cross_entropy(direction.logits(features, rows, cols), direction_targets),
                                [features, *_params(store)])

    store = ParameterStore(np.float64)
    cit = CollinearityHead(store, DIM, rng, CHECK_STD)
    triplets = np.array([[0, 1, 2], [3, 1, 0], [2, 3, 1]])
    cit_targets = rng.integers(0, 5, size=len(triplets))
    checks['head.cit'] = (lambda: ops.cross_entropy(cit.logits(features, triplets), cit_targets),
                          [features, *_params(store)])

    store = ParameterStore(np.float64)
    ser = SerHead(store, DIM, FFN, rng, CHECK_STD)
    tags = rng.integers(0, len(SER_TAGS), size=N)
    checks['head.ser'] = (lambda: ops.cross_entropy(ser.logits(features), tags), [features, *_params(store)])

    store = ParameterStore(np.float64)
    mvlm = MvlmHead(store, DIM, 11, rng, CHECK_STD)
    positions, originals = np.array([0, 2]), np.array([4, 9])
    checks['head.mvlm'] = (lambda: ops.cross_entropy(mvlm.logits(features, positions), originals),
                           [features, *_params(store)])

    # the whole text-layout encoder on a three-segment page
    store = ParameterStore(np.float64)
    document = _tiny_document()
    vocabulary = Vocabulary(['alpha', 'beta', 'gamma', 'delta'])
    encoder = LayoutEncoder(store, vocabulary, rng, DIM, 1, HEADS, FFN, 32, CHECK_STD)
    inputs = encoder.prepare(document)
    checks['layer.layout_encoder'] = (_with_projection(lambda: encoder.encode(inputs).segment_features, rng),
                                      _params(store))
    return checks


def run_grad_checks(eps: float = 1e-5, max_coords: int = 200, seed: int = 0,
                    names: Sequence[str] = ()) -> Dict[str, float]:
    """name -> max relative error"""
    with default_dtype(np.float64):
        checks = build_checks(seed)
        results = {}
        for name, (fn, inputs) in checks.items():
            if names and name not in names:
                continue
            results[name] = grad_check(fn, inputs, eps, max_coords, rng_stream(seed, 42))
            logger.info(f"grad check {name}: max relative error {results[name]:.3e}")
    return results


class GradCheckService:
    """grad-check stage: metrics/grad_check.txt"""

    def run(self, config, artifacts) -> Dict:
        results = run_grad_checks(config.GRADCHECK_EPS, config.GRADCHECK_MAX_COORDS, config.SEED)
        worst = max(results.values()) if results else 0.0
        failed = sorted(name for name, error in results.items() if error >= config.GRADCHECK_TOLERANCE)
        if failed:
            logger.error(f"Gradient check failed for {', '.join(failed)}")
        report = MetricsReport()
        report.extra = {f'grad.{name}': error for name, error in results.items()}
        report.extra['grad.max'] = worst
        report.counts = {'grad.checks': len(results), 'grad.failed': len(failed)}
        report.metadata = artifacts.metadata({'passed': not failed, 'tolerance': config.GRADCHECK_TOLERANCE})
        path = report.save(artifacts.metrics_path('grad_check'))
        return {'outputs': {'metrics': path}, 'max_error': worst, 'failed': failed}


# Create singleton instance
gradcheck_service = GradCheckService()
