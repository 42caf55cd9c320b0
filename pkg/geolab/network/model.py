"""
GeoLab - Model
Encoder plus every head over one ParameterStore, with checkpoint save/load
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, Optional

import numpy as np

from geolab.models.document import Document, Vocabulary
from geolab.network.encoder import EncodedDocument, LayoutEncoder, TokenizedInput
from geolab.network.heads import (CoarseRelationHead, CollinearityHead, DirectionHead, MvlmHead,
                                  PairFeatureExtractor, RelationFeatureEnhancer, RelationMatrix,
                                  SerHead, refine_relations)
from geolab.nn import ops
from geolab.nn.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor, no_grad
from geolab.utils.errors import CheckpointError

logger = logging.getLogger(__name__)

ENCODER_PREFIXES = ('embed.', 'encoder.')
CRP_PREFIXES = ('crp.',)
RFE_PREFIXES = ('pair.', 'rfe.')


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    hidden: int = 256
    layers: int = 4
    heads: int = 4
    ffn: int = 1024
    max_tokens: int = 512
    relation_dim: int = 256
    rfe_heads: int = 2
    rfe_ffn: int = 512
    positive_cap: int = 128
    ser_hidden: int = 256
    init_std: float = 0.02

    @classmethod
    def from_config(cls, config, vocab_size: int) -> 'ModelSpec':
        return cls(
            vocab_size=vocab_size,
            hidden=config.MODEL_HIDDEN,
            layers=config.MODEL_LAYERS,
            heads=config.MODEL_HEADS,
            ffn=config.MODEL_FFN,
            max_tokens=config.MODEL_MAX_TOKENS,
            relation_dim=config.MODEL_RELATION_DIM,
            rfe_heads=config.MODEL_RFE_HEADS,
            rfe_ffn=config.MODEL_RFE_FFN,
            positive_cap=config.MODEL_POSITIVE_CAP,
            ser_hidden=config.MODEL_SER_HIDDEN,
            init_std=config.MODEL_INIT_STD,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class GeoLayoutModel:
    """All parameters are created here in a fixed order, so equal seeds give equal weights"""

    def __init__(self, spec: ModelSpec, vocabulary: Vocabulary, seed: int = 0, dtype=None):
        if len(vocabulary) != spec.vocab_size:
            raise CheckpointError(f"vocabulary has {len(vocabulary)} entries, model expects {spec.vocab_size}")
        self.spec = spec
        self.vocabulary = vocabulary
        self.seed = seed
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng(seed)
        std = spec.init_std
        self.encoder = LayoutEncoder(self.store, vocabulary, rng, spec.hidden, spec.layers, spec.heads,
                                     spec.ffn, spec.max_tokens, std)
        self.crp = CoarseRelationHead(self.store, spec.hidden, rng, std)
        self.pair = PairFeatureExtractor(self.store, spec.hidden, spec.relation_dim, rng, std)
        self.rfe = RelationFeatureEnhancer(self.store, spec.relation_dim, spec.rfe_heads, spec.rfe_ffn, rng, std)
        self.direction = DirectionHead(self.store, spec.hidden, rng, std)
        self.cit = CollinearityHead(self.store, spec.hidden, rng, std)
        self.ser = SerHead(self.store, spec.hidden, spec.ser_hidden, rng, std)
        self.mvlm = MvlmHead(self.store, spec.hidden, spec.vocab_size, rng, std)
        logger.debug(f"Built model with {self.store.num_parameters()} parameters (seed {seed})")

    def encode(self, document, input_ids: Optional[np.ndarray] = None) -> EncodedDocument:
        return self.encoder.encode(document, input_ids)

    def prepare(self, document: Document) -> TokenizedInput:
        return self.encoder.prepare(document)

    def relation_logits(self, features: Tensor, use_rfe: bool = True):
        """(r0 logits, r1 logits or None) for segment features [n, d]"""
        r0_logits = self.crp.logits(features)
        if not use_rfe:
            return r0_logits, None
        r0 = ops.sigmoid(r0_logits).data
        r1_logits, _ = refine_relations(self.pair, self.rfe, features, r0, self.spec.positive_cap)
        return r0_logits, r1_logits

    def relation_matrices(self, document, use_rfe: bool = True):
        """Inference path: (r0, r1) RelationMatrix pair; r1 is None without the RFE"""
        with no_grad():
            encoded = self.encode(document)
            if encoded.segment_features.shape[0] == 0:
                empty = RelationMatrix(np.zeros((0, 0)))
                return empty, (empty if use_rfe else None)
            r0_logits, r1_logits = self.relation_logits(encoded.segment_features, use_rfe)
            r0 = RelationMatrix(ops.sigmoid(r0_logits).data)
            r1 = RelationMatrix(ops.sigmoid(r1_logits).data) if r1_logits is not None else None
        return r0, r1

    def manifest(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        payload = {'model': self.spec.to_dict(), 'init_seed': int(self.seed),
                   'vocabulary': list(self.vocabulary.to_dict()['tokens'])}
        if extra:
            payload.update(extra)
        return payload

    def save(self, path: str, extra: Optional[Dict[str, Any]] = None) -> str:
        return save_checkpoint(path, self.store, self.manifest(extra))

    def load_weights(self, path: str, prefixes: Optional[Iterable[str]] = None) -> Dict[str, Any]:
        manifest = load_checkpoint(path, self.store, prefixes)
        stored = manifest.get('model', {})
        for key in ('hidden', 'layers', 'heads', 'relation_dim', 'vocab_size'):
            if key in stored and stored[key] != getattr(self.spec, key):
                raise CheckpointError(f"{path}: checkpoint {key}={stored[key]} but model has {getattr(self.spec, key)}")
        return manifest

    @classmethod
    def from_checkpoint(cls, path: str, dtype=None) -> 'GeoLayoutModel':
        _, manifest = read_checkpoint(path)
        try:
            spec = ModelSpec(**manifest['model'])
            vocabulary = Vocabulary(manifest['vocabulary'][len(Vocabulary.SPECIALS):])
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"{path}: manifest lacks model description ({e})")
        model = cls(spec, vocabulary, manifest.get('init_seed', 0), dtype)
        model.load_weights(path)
        return model
