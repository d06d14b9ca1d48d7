"""
Case-level batch execution

Cases run in a multiprocessing pool (or inline for a single worker) and
come back in case-id order whatever the scheduling. A failing case is
logged and recorded in the summary; the other cases keep running.
"""
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple, Union

import pandas as pd
from tqdm import tqdm

LOGGER = logging.getLogger(__name__)

STATUS_OK = 'ok'
STATUS_ERROR = 'error'


@dataclass
class CaseResult:
    case_id: str
    status: str = STATUS_OK
    outputs: List[str] = field(default_factory=list)
    message: str = ''
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass
class BatchSummary:
    command: str
    results: List[CaseResult] = field(default_factory=list)

    @property
    def errors(self) -> List[CaseResult]:
        return [r for r in self.results if not r.ok]

    @property
    def exit_code(self) -> int:
        return 0 if not self.errors else 1

    def to_dataframe(self) -> pd.DataFrame:
        rows = [
            {
                'case_id': r.case_id,
                'status': r.status,
                'message': r.message,
                'outputs': ';'.join(r.outputs),
                **{k: v for k, v in sorted(r.details.items()) if isinstance(v, (str, int, float, bool))},
            }
            for r in self.results
        ]
        return pd.DataFrame(rows)

    def write(self, output_dir: Union[str, Path]) -> str:
        """Write <command>_summary.csv next to the outputs"""
        path = Path(output_dir) / f'{self.command}_summary.csv'
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_dataframe().to_csv(path, index=False, lineterminator='\n')
        return str(path)


class _Guarded:
    """Picklable wrapper turning worker exceptions into error results"""

    def __init__(self, worker: Callable[..., CaseResult], command: str):
        self.worker = worker
        self.command = command

    def __call__(self, item: Tuple[str, Any]) -> CaseResult:
        case_id, payload = item
        try:
            return self.worker(case_id, payload)
        except Exception as e:
            LOGGER.error(f'{self.command} failed for case {case_id}: {type(e).__name__}: {e}')
            return CaseResult(case_id, STATUS_ERROR, message=f'{type(e).__name__}: {e}')


def run_cases(
    command: str,
    worker: Callable[..., CaseResult],
    items: Sequence[Tuple[str, Any]],
    workers: int = 1,
    progress: bool = True,
) -> BatchSummary:
    """
    Run `worker(case_id, payload)` for every item

    Args:
        command: name used in logs and the summary file
        worker: module-level callable (or functools.partial of one) returning a CaseResult
        items: (case_id, payload) pairs
        workers: pool size; 1 runs inline
        progress: show a tqdm progress bar

    Returns:
        BatchSummary with results ordered by case id
    """
    items = sorted(items, key=lambda item: item[0])
    guarded = _Guarded(worker, command)
    workers = max(1, min(int(workers), len(items) or 1))
    bar = dict(total=len(items), desc=command, unit='case', disable=not progress, dynamic_ncols=True)

    if workers == 1:
        results = [guarded(item) for item in tqdm(items, **bar)]
    else:
        with mp.Pool(workers) as pool:
            results = list(tqdm(pool.imap(guarded, items), **bar))

    summary = BatchSummary(command, results)
    LOGGER.info(f'{command}: {len(results) - len(summary.errors)} of {len(results)} cases succeeded')
    return summary
