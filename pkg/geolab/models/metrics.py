"""
GeoLab - Metrics Models
Decoded relation sets and the metrics report written for the CLI
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Optional, Tuple

from dotenv import dotenv_values

from geolab.utils.helpers import harmonic_f1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodedRelations:
    """(son index, father index) links of one document"""
    doc_id: str
    links: FrozenSet[Tuple[int, int]] = frozenset()

    def __len__(self):
        return len(self.links)

    def __iter__(self):
        return iter(sorted(self.links))


@dataclass
class MetricsReport:
    re_precision: Optional[float] = None
    re_recall: Optional[float] = None
    ser_precision: Optional[float] = None
    ser_recall: Optional[float] = None
    probe_entropy: Optional[float] = None
    probe_xent: Optional[float] = None
    probe_acc: Optional[float] = None
    probe_majority_acc: Optional[float] = None
    extra: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def re_f1(self) -> Optional[float]:
        if self.re_precision is None or self.re_recall is None:
            return None
        return harmonic_f1(self.re_precision, self.re_recall)

    @property
    def ser_f1(self) -> Optional[float]:
        if self.ser_precision is None or self.ser_recall is None:
            return None
        return harmonic_f1(self.ser_precision, self.ser_recall)

    def values(self) -> Dict[str, float]:
        """Stable key names -> values, only for quantities that were measured"""
        named = {
            're.precision': self.re_precision,
            're.recall': self.re_recall,
            're.f1': self.re_f1,
            'ser.precision': self.ser_precision,
            'ser.recall': self.ser_recall,
            'ser.f1': self.ser_f1,
            'probe.entropy': self.probe_entropy,
            'probe.xent': self.probe_xent,
            'probe.acc': self.probe_acc,
            'probe.majority_acc': self.probe_majority_acc,
        }
        values = {k: float(v) for k, v in named.items() if v is not None}
        values.update({k: float(v) for k, v in self.extra.items()})
        return values

    def to_dict(self) -> Dict[str, Any]:
        payload = dict(self.values())
        payload.update({f'count.{k}': int(v) for k, v in self.counts.items()})
        payload.update({f'meta.{k}': v for k, v in self.metadata.items()})
        return payload

    def to_text(self) -> str:
        """key=value lines, sorted; no timestamps so reruns are byte-identical"""
        lines = []
        for key, value in sorted(self.to_dict().items()):
            if isinstance(value, float):
                value = f'{value:.6f}'
            lines.append(f'{key}={value}')
        return '\n'.join(lines) + '\n'

    def save(self, path: str) -> str:
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(self.to_text())
        logger.info(f"Wrote metrics {path}")
        return path

    @classmethod
    def load(cls, path: str) -> 'MetricsReport':
        raw = dotenv_values(path)
        report = cls()

        def number(key):
            return float(raw[key]) if raw.get(key) not in (None, '') else None

        report.re_precision = number('re.precision')
        report.re_recall = number('re.recall')
        report.ser_precision = number('ser.precision')
        report.ser_recall = number('ser.recall')
        report.probe_entropy = number('probe.entropy')
        report.probe_xent = number('probe.xent')
        report.probe_acc = number('probe.acc')
        report.probe_majority_acc = number('probe.majority_acc')
        report.counts = {k[len('count.'):]: int(v) for k, v in raw.items() if k.startswith('count.')}
        report.metadata = {k[len('meta.'):]: v for k, v in raw.items() if k.startswith('meta.')}
        known = set(report.values()) | {'re.f1', 'ser.f1'}
        report.extra = {k: float(v) for k, v in raw.items()
                        if k not in known and not k.startswith(('count.', 'meta.'))}
        return report
