"""
GeoLab - Test Fixtures
"""
import numpy as np
import pytest

from config.config import load_config
from geolab.models.document import Document, TextSegment, Vocabulary, Word
from geolab.models.geometry import BBox
from geolab.network.model import GeoLayoutModel, ModelSpec
from geolab.nn.tensor import default_dtype
from geolab.services.artifact_service import RunArtifacts
from geolab.services.synthetic_service import GeneratorSpec, generate_synthetic_corpus


def make_segment(segment_id, text, box, label='other'):
    """One segment whose words are laid out left to right inside `box`"""
    x1, y1, x2, y2 = box
    texts = text.split()
    width = (x2 - x1) / len(texts)
    words = tuple(Word(t, BBox(x1 + k * width, y1, x1 + (k + 1) * width, y2)) for k, t in enumerate(texts))
    return TextSegment(segment_id, words, label)


@pytest.fixture(autouse=True)
def float64_mode():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def config():
    return load_config(profile='testing')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def key_value_document():
    """Two questions with one answer each, plus a header above them"""
    segments = (
        make_segment(0, 'PERSONAL DETAILS', (40, 20, 240, 32), 'header'),
        make_segment(1, 'name', (40, 50, 100, 62), 'question'),
        make_segment(2, 'john smith', (120, 50, 220, 62), 'answer'),
        make_segment(3, 'city', (40, 80, 100, 92), 'question'),
        make_segment(4, 'paris', (120, 80, 180, 92), 'answer'),
    )
    links = frozenset({(0, 1), (0, 3), (1, 2), (3, 4)})
    return Document('form-a', segments, links)


@pytest.fixture
def synthetic_documents():
    spec = GeneratorSpec(n_docs=3, columns=1, rows=3, jitter=1.0, multi_father_rate=0.5, header_rate=1.0)
    return generate_synthetic_corpus(spec, np.random.default_rng(7), prefix='unit')


@pytest.fixture
def vocabulary(synthetic_documents, key_value_document):
    return Vocabulary.build(list(synthetic_documents) + [key_value_document])


@pytest.fixture
def model_spec(vocabulary):
    return ModelSpec(vocab_size=len(vocabulary), hidden=8, layers=1, heads=2, ffn=16, max_tokens=96,
                     relation_dim=8, rfe_heads=2, rfe_ffn=16, positive_cap=16, ser_hidden=8)


@pytest.fixture
def tiny_model(model_spec, vocabulary):
    return GeoLayoutModel(model_spec, vocabulary, seed=0, dtype=np.float64)


@pytest.fixture
def artifacts(tmp_path, config):
    return RunArtifacts(str(tmp_path / 'run'), config)
