"""
GeoLab - Report Service
Collects metrics files, curves and ablation tables of one run into CSV and a text summary
"""
import glob
import logging
import os
from typing import Dict, List, Optional

import pandas as pd

from geolab.models.metrics import MetricsReport
from geolab.utils.errors import ConfigMismatchError, MissingArtifactError
from geolab.utils.helpers import FORMAT_VERSION, format_file_size

logger = logging.getLogger(__name__)


def collect_metrics(metrics_dir: str) -> Dict[str, MetricsReport]:
    """name -> report for every metrics/<name>.txt, in name order"""
    paths = sorted(glob.glob(os.path.join(metrics_dir, '*.txt')))
    return {os.path.splitext(os.path.basename(path))[0]: MetricsReport.load(path) for path in paths}


def check_hashes(reports: Dict[str, MetricsReport], expected: Optional[str] = None) -> str:
    """The single config hash shared by all reports; mixed hashes are refused"""
    hashes = {name: report.metadata.get('config_hash') for name, report in reports.items()}
    distinct = sorted({h for h in hashes.values() if h})
    if expected and expected not in distinct and distinct:
        distinct.append(expected)
    if len(distinct) > 1:
        detail = ', '.join(f'{name}={(h or "?")[:12]}' for name, h in sorted(hashes.items()))
        logger.error(f"Refusing to report over mixed configs: {detail}")
        raise ConfigMismatchError(f"metrics come from different configs ({detail})")
    return distinct[0] if distinct else (expected or '')


def metrics_frame(reports: Dict[str, MetricsReport]) -> pd.DataFrame:
    rows = []
    for name, report in reports.items():
        for key, value in sorted(report.values().items()):
            rows.append({'source': name, 'key': key, 'value': value})
        for key, value in sorted(report.counts.items()):
            rows.append({'source': name, 'key': f'count.{key}', 'value': float(value)})
    return pd.DataFrame(rows, columns=['source', 'key', 'value'])


def _curve_lines(path: str) -> List[str]:
    frame = pd.read_csv(path)
    name = os.path.splitext(os.path.basename(path))[0]
    if {'shots', 'variant', 'f1'} <= set(frame.columns):
        pivot = frame.groupby(['shots', 'variant'])['f1'].mean().unstack('variant')
        lines = [f'{name}: mean F1 by shots']
        for shots, row in pivot.iterrows():
            lines.append(f'  {int(shots):>4}  ' + '  '.join(f'{variant}={value:.4f}' for variant, value in row.items()))
        return lines
    if 'epoch' in frame.columns and 'total' in frame.columns and len(frame):
        first, last = frame['total'].iloc[0], frame['total'].iloc[-1]
        return [f'{name}: {len(frame)} epochs, total loss {first:.4f} -> {last:.4f}']
    return [f'{name}: {len(frame)} rows']


def _table_lines(path: str) -> List[str]:
    frame = pd.read_csv(path)
    name = os.path.splitext(os.path.basename(path))[0]
    if 'f1_mean' not in frame.columns:
        return []
    lines = [f'{name}:']
    for _, row in frame.iterrows():
        lines.append(f"  [{row['table']}] {row['setting']:<32} F1={row['f1_mean']:.4f} +/- {row['f1_std']:.4f}")
    return lines


class ReportService:
    """report stage: report/metrics.csv and report/summary.txt"""

    def run(self, config, artifacts) -> Dict:
        reports = collect_metrics(os.path.join(artifacts.root, 'metrics'))
        reports.pop('report', None)
        if not reports:
            raise MissingArtifactError('metrics/*.txt', 'evaluate')
        config_hash = check_hashes(reports, None if artifacts.force else artifacts.config_hash)

        frame = metrics_frame(reports)
        csv_path = os.path.join(artifacts.report_dir, 'metrics.csv')
        artifacts.stamp(frame).to_csv(csv_path, index=False, float_format='%.6f')

        lines = [f'config_hash={config_hash}', f'seed={artifacts.seed}', f'format_version={FORMAT_VERSION}', '']
        for name, report in reports.items():
            lines.append(f'[{name}]')
            lines.extend(f'{key}={value:.6f}' for key, value in sorted(report.values().items()))
            lines.append('')
        for path in sorted(glob.glob(os.path.join(artifacts.root, 'curves', '*.csv'))):
            lines.extend(_curve_lines(path))
        tables = sorted(p for p in glob.glob(os.path.join(artifacts.root, 'tables', '*.csv'))
                        if not p.endswith('_runs.csv'))
        for path in tables:
            lines.extend(_table_lines(path))

        summary_path = os.path.join(artifacts.report_dir, 'summary.txt')
        with open(summary_path, 'w', encoding='utf-8') as fh:
            fh.write('\n'.join(lines).rstrip('\n') + '\n')
        logger.info(f"Report over {len(reports)} metrics files ({format_file_size(os.path.getsize(csv_path))})")
        return {'outputs': {'metrics': csv_path, 'summary': summary_path}, 'sources': sorted(reports)}


# Create singleton instance
report_service = ReportService()
