"""
Tests for audit reports and run artifacts.
"""
import json

import numpy as np
import pandas as pd

from carnotlip.reports import AuditReport, build_payload, format_report, write_artifacts


class TestAuditReport:
    """Test report values and rendering."""

    def test_truthiness(self):
        """Test a report is truthy exactly when it passed."""
        assert AuditReport('a', True)
        assert not AuditReport('a', False)

    def test_to_dict_summarizes_tables(self):
        """Test tables are reported by row count."""
        report = AuditReport('tiling', True, {'coverage': np.float64(1.0)},
                             tables={'cells': pd.DataFrame({'x': [1, 2, 3]})})
        data = report.to_dict()
        assert data['tables'] == {'cells': 3}
        assert data['metrics'] == {'coverage': 1.0}

    def test_format_report(self):
        """Test the text report shows the status and every metric."""
        text = format_report(AuditReport('tiling', False, {'coverage': 0.98, 'alpha': 2},
                                         [{'cube': 'x'}]))
        assert 'TILING REPORT' in text
        assert 'FAILED' in text
        assert 'coverage:' in text
        assert 'alpha:' in text


class TestArtifacts:
    """Test JSON and CSV artifacts."""

    def test_build_payload(self):
        """Test the deterministic body carries command, version and seed."""
        body = build_payload('group_check', '0.1.0', 3, {'samples': 10}, {'passed': True})
        assert body == {'command': 'group_check', 'version': '0.1.0', 'seed': 3,
                        'config': {'samples': 10}, 'payload': {'passed': True}}

    def test_write_artifacts(self, tmp_path):
        """Test one JSON file plus one CSV per table."""
        tables = {'pieces': pd.DataFrame({'piece': ['0'], 'bilip': [1.0]})}
        paths = write_artifacts(str(tmp_path / "out"), 'decompose_run', '0.1.0', 0,
                                {'delta': 0.01}, {'pieces': 1}, tables)
        assert [p.name for p in paths] == ['decompose_run.json', 'decompose_run_pieces.csv']
        body = json.loads(paths[0].read_text())
        assert body['config'] == {'delta': 0.01}
        assert 'written_utc' in body['timestamps']
        assert pd.read_csv(paths[1])['bilip'].tolist() == [1.0]

    def test_reruns_differ_only_in_timestamps(self, tmp_path):
        """Test equal inputs give equal bodies apart from timestamps."""
        bodies = []
        for name in ('a', 'b'):
            path = write_artifacts(str(tmp_path / name), 'x', '0.1.0', 1, {'k': 1.5},
                                   {'v': [1, 2]})[0]
            body = json.loads(path.read_text())
            body.pop('timestamps')
            bodies.append(body)
        assert bodies[0] == bodies[1]
