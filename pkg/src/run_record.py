"""
Run Record Module
Deterministic CSV/JSON output for training, comparison, sweep and verification runs
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from dotenv import dotenv_values

from src.config import TrainingConfig
from src.logger import get_logger

logger = get_logger('RunRecord')

STEP_HEADER = ('step', 'agent', 'mean_delta', 'mean_advantage', 'gate', 'train_acc', 'max_kl', 'grad_norm')
CURVE_HEADER = ('step', 'train_acc', 'gate', 'max_kl')
SWEEP_HEADER = ('value', 'joint_acc', 'solo_acc', 'final_train_acc')
COMPARE_HEADER = ('step', 'mode', 'train_acc', 'agent1_grad_norm')


class OutputError(Exception):
    """Writing a result file failed"""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


def make_run_id(seed: int, now: Optional[datetime] = None) -> str:
    """YYYYmmdd-HHMMSS-seed<S>; only ever used to name directories"""
    now = now or datetime.now()
    return f"{now.strftime('%Y%m%d-%H%M%S')}-seed{seed}"


def format_float(value, precision: int = TrainingConfig.CSV_PRECISION) -> str:
    """Fixed-decimal text; nan/inf spelled out, negative zero folded into zero"""
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    text = f'{value + 0.0:.{precision}f}'
    if text.startswith('-') and float(text) == 0.0:
        text = text[1:]
    return text


def _json_number(value):
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(format_float(value))


@dataclass
class RunRecord:
    """
    Everything one run produces

    config_snapshot is the dump_config text of the resolved config. Step
    reports come from the trainer, verification results from the suites.
    """
    run_id: str
    config_snapshot: str = ''
    step_reports: List = field(default_factory=list)
    final_metrics: Dict[str, float] = field(default_factory=dict)
    verification_results: List = field(default_factory=list)

    def step_rows(self) -> List[List[str]]:
        rows = []
        for report in self.step_reports:
            for agent in range(len(report.grad_norms)):
                rows.append([
                    str(report.step),
                    str(agent + 1),
                    format_float(report.per_agent_mean_delta[agent]),
                    format_float(report.per_agent_mean_advantage[agent]),
                    format_float(report.gate_value),
                    format_float(report.train_accuracy),
                    format_float(report.max_kl),
                    format_float(report.grad_norms[agent]),
                ])
        return rows

    def curve_rows(self) -> List[List[str]]:
        return [
            [str(r.step), format_float(r.train_accuracy), format_float(r.gate_value), format_float(r.max_kl)]
            for r in self.step_reports
        ]

    def config_values(self) -> Dict[str, str]:
        if not self.config_snapshot:
            return {}
        return dict(dotenv_values(stream=io.StringIO(self.config_snapshot), interpolate=False))

    def summary(self) -> dict:
        """JSON-ready summary; contains no run_id or wall-clock values"""
        by_suite: Dict[str, list] = {}
        checks = []
        for result in self.verification_results:
            by_suite.setdefault(result.name.split('/', 1)[0], []).append(result)
            checks.append({
                'name': result.name,
                'passed': bool(result.passed),
                'measured': _json_number(result.measured),
                'bound': _json_number(result.bound),
                'detail': result.detail,
            })

        summary = {
            'config': self.config_values(),
            'final_metrics': {k: _json_number(v) for k, v in self.final_metrics.items()},
            'steps': len(self.step_reports),
        }
        if self.verification_results:
            suites = [_suite_entry(name, results) for name, results in by_suite.items()]
            summary['verification'] = {
                'passed': all(s['passed'] for s in suites),
                'suites': suites,
                'checks': checks,
            }
        return summary


def _suite_entry(name: str, results: list) -> dict:
    """
    One suite's verdict with the values of its deciding check

    The deciding check is the first failure, or the suite's last check
    when everything passed.
    """
    failed = [r for r in results if not r.passed]
    deciding = failed[0] if failed else results[-1]
    return {
        'name': name,
        'passed': not failed,
        'check': deciding.name,
        'measured': _json_number(deciding.measured),
        'bound': _json_number(deciding.bound),
    }


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    """UTF-8, LF-terminated CSV"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise OutputError(f"Cannot write {path}: {e}", path)
    return path


def write_json(path, payload) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write('\n')
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise OutputError(f"Cannot write {path}: {e}", path)
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise OutputError(f"Cannot write {path}: {e}", path)
    return path


def write_outputs(record: RunRecord, directory) -> Dict[str, Path]:
    """
    Write a run's files under `directory`

    steps.csv and plotdata/learning_curve.csv are written when the record
    holds step reports; config.cfg when it holds a config snapshot;
    summary.json always.

    Raises:
        OutputError: With the failing path
    """
    directory = Path(directory)
    paths = {}
    if record.step_reports:
        paths['steps'] = write_csv(directory / 'steps.csv', STEP_HEADER, record.step_rows())
        paths['learning_curve'] = write_csv(directory / 'plotdata' / 'learning_curve.csv',
                                            CURVE_HEADER, record.curve_rows())
    if record.config_snapshot:
        paths['config'] = write_text(directory / 'config.cfg', record.config_snapshot)
    paths['summary'] = write_json(directory / 'summary.json', record.summary())
    logger.info(f"Run {record.run_id} written to {directory}")
    return paths


def write_sweep(path, rows: Iterable[Sequence]) -> Path:
    """rows of (value, joint_acc, solo_acc, final_train_acc)"""
    return write_csv(path, SWEEP_HEADER, [
        [str(value), format_float(joint), format_float(solo), format_float(final)]
        for value, joint, solo, final in rows
    ])


def write_compare(path, curves: Dict[str, Sequence]) -> Path:
    """curves maps credit mode -> its step reports"""
    rows = []
    for mode, reports in curves.items():
        for r in reports:
            rows.append([str(r.step), mode, format_float(r.train_accuracy), format_float(r.grad_norms[0])])
    rows.sort(key=lambda row: (int(row[0]), row[1]))
    return write_csv(path, COMPARE_HEADER, rows)
