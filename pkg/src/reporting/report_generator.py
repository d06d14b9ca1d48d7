"""
Metrics report output

Writes a MetricsReport as JSON (every score, aggregate, bin and convention),
as a flat CSV table (one row per structure per case) and as an HTML summary
rendered from templates/metrics_report.html. Nothing time-dependent goes
into the files so reruns are byte-identical.
"""
import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd
from jinja2 import Template

from src.analytics.metrics import MetricsReport, SCORE_FIELDS
from src.core import config
from src.utils.helpers import format_significant

LOGGER = logging.getLogger(__name__)

CSV_COLUMNS = ['case_id', 'label_id', 'label_name', 'dice', 'precision', 'recall', 'nsd']


class ReportGenerator:
    """Render metrics reports to JSON, CSV and HTML"""

    def __init__(self, digits: Optional[int] = None):
        template_dir = os.path.join(
            os.path.dirname(os.path.dirname(os.path.dirname(__file__))),
            'templates'
        )
        self.template_path = os.path.join(template_dir, 'metrics_report.html')
        self.digits = digits or config.METRICS_CONFIG['score_digits']

    def to_dataframe(self, report: MetricsReport) -> pd.DataFrame:
        """One row per structure per case, sorted by case id then label id"""
        rows = [score.to_dict() for score in report.scores]
        df = pd.DataFrame(rows, columns=CSV_COLUMNS + ['tau_mm', 'empty'])
        df = df.sort_values(by=['case_id', 'label_id'], kind='mergesort').reset_index(drop=True)
        return df

    def generate_csv(self, report: MetricsReport, filename: Optional[Union[str, Path]] = None) -> str:
        """
        Generate the score table as CSV

        Args:
            report: metrics report
            filename: Optional filename (if None, returns CSV string)

        Returns:
            CSV file path or CSV string
        """
        df = self.to_dataframe(report)[CSV_COLUMNS]
        float_format = f'%.{self.digits}g'
        if filename:
            Path(filename).parent.mkdir(parents=True, exist_ok=True)
            df.to_csv(filename, index=False, float_format=float_format, lineterminator='\n', encoding='utf-8')
            return str(filename)
        return df.to_csv(index=False, float_format=float_format, lineterminator='\n')

    def generate_json(self, report: MetricsReport, filename: Union[str, Path]) -> str:
        Path(filename).parent.mkdir(parents=True, exist_ok=True)
        with open(filename, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write('\n')
        return str(filename)

    def structure_rows(self, report: MetricsReport) -> list:
        """Box-plot summary of Dice and NSD per structure, for the HTML table"""
        names = {s.label_id: s.label_name for s in report.scores}
        rows = []
        for label, stats in sorted(report.aggregates.per_structure.items()):
            dice = stats['dice']
            rows.append({
                'label_id': label,
                'label_name': names.get(label, f'label_{label}'),
                'count': dice.count,
                'dice': {k: format_significant(v, 4) for k, v in dice.to_dict().items() if k != 'count'},
                'nsd_mean': format_significant(stats['nsd'].mean, 4),
                'nsd_std': format_significant(stats['nsd'].std, 4),
                'poor': label in report.aggregates.poor_structures,
            })
        return rows

    def generate_html(self, report: MetricsReport, filename: Union[str, Path], title: str = 'Segmentation metrics') -> str:
        """
        Render the HTML summary

        Args:
            report: metrics report
            filename: output path
            title: page heading

        Returns:
            Path to the generated HTML file
        """
        with open(self.template_path, 'r', encoding='utf-8') as f:
            template = Template(f.read())

        overall = {
            metric: {k: format_significant(v, 4) for k, v in report.aggregates.overall[metric].to_dict().items()}
            for metric in SCORE_FIELDS
        }
        html_output = template.render(
            title=title,
            tau_mm=format_significant(report.tau_mm, 4),
            overall=overall,
            metrics=SCORE_FIELDS,
            bins=report.aggregates.bins.to_dict(),
            structure_bins=report.aggregates.structure_bins.to_dict(),
            structures=self.structure_rows(report),
            poor_edge=config.METRICS_CONFIG['poor_dice'],
            conventions=report.conventions,
            n_cases=len({s.case_id for s in report.scores}),
            n_scores=len(report.scores),
            empty_flagged=report.aggregates.empty_flagged,
        )

        Path(filename).parent.mkdir(parents=True, exist_ok=True)
        with open(filename, 'w', encoding='utf-8') as f:
            f.write(html_output)
        return str(filename)

    def write_all(self, report: MetricsReport, output_dir: Union[str, Path], stem: str = 'metrics',
                  html: bool = True) -> Dict[str, str]:
        """Write <stem>.json, <stem>.csv and optionally <stem>.html into output_dir"""
        output_dir = Path(output_dir)
        paths = {
            'json': self.generate_json(report, output_dir / f'{stem}.json'),
            'csv': self.generate_csv(report, output_dir / f'{stem}.csv'),
        }
        if html:
            paths['html'] = self.generate_html(report, output_dir / f'{stem}.html')
        LOGGER.info(f'Wrote metrics report for {len(report.scores)} scores to {output_dir}')
        return paths
