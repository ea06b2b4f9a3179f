__all__ = ['PERCENTILES', 'timing_stats', 'summarize', 'render_table', 'write_report']

# Cell
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

PERCENTILES = (50, 75, 90, 95, 99)
SCORES = ('precision', 'recall', 'f1')

# Cell
def timing_stats(durations: Sequence[float]) -> Dict[str, float]:
    """Mean, min, max, percentiles and IQR of run durations (seconds)."""
    x = np.asarray(durations, dtype=float)
    if x.size == 0:
        return {}
    stats = {'mean': float(x.mean()), 'min': float(x.min()), 'max': float(x.max())}
    stats.update({f'p{q}': float(np.percentile(x, q)) for q in PERCENTILES})
    stats['iqr'] = float(np.percentile(x, 75) - np.percentile(x, 25))
    return stats


def summarize(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """Mean and standard deviation of the scores per task.

    `rows` hold one scored run each with 'task' and the score columns.
    """
    df = pd.DataFrame(rows, columns=['task', 'run', *SCORES])
    grouped = df.groupby('task')[list(SCORES)]
    summary = grouped.mean().add_suffix('_mean').join(grouped.std(ddof=0).add_suffix('_std'))
    summary['runs'] = df.groupby('task').size()
    return summary.reset_index()


def render_table(summary: pd.DataFrame) -> str:
    """Human table in `mean ± std` layout."""
    lines = [f"{'Task':<16}{'Precision':>16}{'Recall':>16}{'F1-Score':>16}{'Runs':>6}"]
    for _, row in summary.iterrows():
        cells = [f"{row[f'{s}_mean']:.3f} ± {row[f'{s}_std']:.3f}" for s in SCORES]
        lines.append(f"{row['task']:<16}" + ''.join(f'{c:>16}' for c in cells) + f"{int(row['runs']):>6}")
    return '\n'.join(lines) + '\n'


def write_report(directory: Union[str, Path], runs: List[Dict[str, Any]],
                 timings: Dict[str, Dict[str, float]]) -> List[Path]:
    """Writes `eval-report.json` and `eval-report.txt`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = summarize([{'task': r['task'], 'run': r['run'], **{s: r['report'][s] for s in SCORES}}
                         for r in runs])
    report = {'runs': runs, 'summary': summary.to_dict(orient='records'), 'timings': timings}
    json_path, text_path = directory / 'eval-report.json', directory / 'eval-report.txt'
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    text_path.write_text(render_table(summary))
    return [json_path, text_path]
