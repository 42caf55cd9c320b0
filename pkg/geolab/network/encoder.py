"""
GeoLab - Layout Encoder
Five-part token embedding (token, position, segment rank, BIE, 2D box) and a pre-norm
transformer stack producing token features and first-token segment features.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from geolab.models.document import MAX_SEGMENTS, Document, Vocabulary
from geolab.nn import ops
from geolab.nn.layers import Embedding, EncoderLayer
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor
from geolab.utils.errors import DimensionError

logger = logging.getLogger(__name__)

BOX_BUCKETS = 1000
BOX_FIELDS = ('x1', 'y1', 'x2', 'y2', 'w', 'h')

BIE_SPECIAL, BIE_BEGIN, BIE_INSIDE, BIE_END = 0, 1, 2, 3


@dataclass
class TokenizedInput:
    """Integer inputs for one document; row 0 is [CLS]"""
    doc_id: str
    input_ids: np.ndarray        # [T]
    positions: np.ndarray        # [T]
    ranks: np.ndarray            # [T], segment index + 1, 0 for special tokens
    bie: np.ndarray              # [T]
    boxes: np.ndarray            # [T, 6] bucket ids
    valid: np.ndarray            # [T] bool, False on padding
    token_segment: np.ndarray    # [T], segment index or -1
    first_token: np.ndarray      # [n]
    truncated: int = 0

    @property
    def length(self) -> int:
        return int(self.input_ids.shape[0])

    @property
    def num_segments(self) -> int:
        return int(self.first_token.shape[0])

    @property
    def content_positions(self) -> np.ndarray:
        """Positions holding segment tokens"""
        return np.flatnonzero(self.token_segment >= 0)


@dataclass
class EncodedDocument:
    token_features: Tensor       # [T, d]
    segment_features: Tensor     # [n, d]
    inputs: TokenizedInput

    @property
    def token_mask(self) -> np.ndarray:
        return self.inputs.valid


def bucketize(value: float, extent: float) -> int:
    return int(np.clip(np.floor(value * BOX_BUCKETS / extent), 0, BOX_BUCKETS))


def _box_buckets(box, page_w: float, page_h: float) -> List[int]:
    x1, y1, x2, y2 = box
    return [bucketize(x1, page_w), bucketize(y1, page_h), bucketize(x2, page_w),
            bucketize(y2, page_h), bucketize(x2 - x1, page_w), bucketize(y2 - y1, page_h)]


def _trim_lengths(lengths: List[int], capacity: int) -> List[int]:
    """Drop tokens from the longest segments (smallest index on ties) until the total fits"""
    lengths = list(lengths)
    excess = sum(lengths) - capacity
    while excess > 0:
        longest = max(range(len(lengths)), key=lambda i: (lengths[i], -i))
        lengths[longest] -= 1
        excess -= 1
    return lengths


def tokenize_document(document: Document, vocabulary: Vocabulary, max_tokens: int = 512,
                      pad_to: Optional[int] = None) -> TokenizedInput:
    """[CLS] followed by every segment's tokens in segment order"""
    n = len(document.segments)
    if n > MAX_SEGMENTS:
        raise DimensionError('tokenize_document', (n,), (MAX_SEGMENTS,))
    if n + 1 > max_tokens:
        raise DimensionError('tokenize_document', (n + 1,), (max_tokens,))
    page_w, page_h = document.page_size

    segment_ids = [list(s.token_ids) if s.token_ids else vocabulary.encode(s.tokens)
                   for s in document.segments]
    lengths = [len(ids) for ids in segment_ids]
    kept = _trim_lengths(lengths, max_tokens - 1)
    truncated = sum(lengths) - sum(kept)
    if truncated:
        logger.warning(f"Document {document.id}: truncated {truncated} tokens to fit {max_tokens}")

    ids, ranks, bie, boxes, token_segment = [vocabulary.cls_id], [0], [BIE_SPECIAL], [], [-1]
    boxes.append(_box_buckets((0.0, 0.0, page_w, page_h), page_w, page_h))
    first_token = []
    for index, (segment, seg_ids, count) in enumerate(zip(document.segments, segment_ids, kept)):
        first_token.append(len(ids))
        seg_box = _box_buckets(segment.box.to_list(), page_w, page_h)
        for k in range(count):
            ids.append(seg_ids[k])
            ranks.append(index + 1)
            if k == 0:
                bie.append(BIE_BEGIN)
            elif k == count - 1:
                bie.append(BIE_END)
            else:
                bie.append(BIE_INSIDE)
            boxes.append(seg_box)
            token_segment.append(index)

    length = len(ids)
    valid = [True] * length
    if pad_to is not None:
        if pad_to < length or pad_to > max_tokens:
            raise DimensionError('tokenize_document', (length,), (pad_to,))
        extra = pad_to - length
        ids += [vocabulary.pad_id] * extra
        ranks += [0] * extra
        bie += [BIE_SPECIAL] * extra
        boxes += [[0] * len(BOX_FIELDS)] * extra
        token_segment += [-1] * extra
        valid += [False] * extra

    total = len(ids)
    return TokenizedInput(
        doc_id=document.id,
        input_ids=np.asarray(ids, dtype=np.int64),
        positions=np.arange(total, dtype=np.int64),
        ranks=np.asarray(ranks, dtype=np.int64),
        bie=np.asarray(bie, dtype=np.int64),
        boxes=np.asarray(boxes, dtype=np.int64).reshape(total, len(BOX_FIELDS)),
        valid=np.asarray(valid, dtype=bool),
        token_segment=np.asarray(token_segment, dtype=np.int64),
        first_token=np.asarray(first_token, dtype=np.int64),
        truncated=truncated,
    )


class LayoutEncoder:
    """Text-layout encoder; parameters live under `embed.*` and `encoder.*`"""

    def __init__(self, store: ParameterStore, vocabulary: Vocabulary, rng: np.random.Generator,
                 hidden: int = 256, layers: int = 4, heads: int = 4, ffn: int = 1024,
                 max_tokens: int = 512, std: float = 0.02):
        self.vocabulary = vocabulary
        self.hidden = hidden
        self.max_tokens = max_tokens
        self.token = Embedding(store, 'embed.token', len(vocabulary), hidden, rng, std)
        self.position = Embedding(store, 'embed.position', max_tokens, hidden, rng, std)
        self.rank = Embedding(store, 'embed.rank', MAX_SEGMENTS + 1, hidden, rng, std)
        self.bie = Embedding(store, 'embed.bie', 4, hidden, rng, std)
        self.box = [Embedding(store, f'embed.box.{field}', BOX_BUCKETS + 1, hidden, rng, std)
                    for field in BOX_FIELDS]
        self.layers = [EncoderLayer(store, f'encoder.layers.{i}', hidden, heads, ffn, rng, std)
                       for i in range(layers)]

    def prepare(self, document: Union[Document, TokenizedInput], pad_to: Optional[int] = None) -> TokenizedInput:
        if isinstance(document, TokenizedInput):
            return document
        return tokenize_document(document, self.vocabulary, self.max_tokens, pad_to)

    def embed(self, document: Union[Document, TokenizedInput], input_ids: Optional[np.ndarray] = None) -> Tensor:
        """Sum of token, position, rank, BIE and six box embeddings per token -> [T, d]"""
        inputs = self.prepare(document)
        ids = inputs.input_ids if input_ids is None else np.asarray(input_ids, dtype=np.int64)
        x = self.token(ids)
        x = ops.add(x, self.position(inputs.positions))
        x = ops.add(x, self.rank(inputs.ranks))
        x = ops.add(x, self.bie(inputs.bie))
        for column, table in enumerate(self.box):
            x = ops.add(x, table(inputs.boxes[:, column]))
        return x

    def encode(self, document: Union[Document, TokenizedInput],
               input_ids: Optional[np.ndarray] = None) -> EncodedDocument:
        inputs = self.prepare(document)
        x = self.embed(inputs, input_ids)
        key_mask = inputs.valid if not inputs.valid.all() else None
        for layer in self.layers:
            x = layer(x, key_mask)
        segments = ops.take(x, inputs.first_token, axis=0)
        return EncodedDocument(token_features=x, segment_features=segments, inputs=inputs)
