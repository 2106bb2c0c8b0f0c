"""
CSV processing for runtime datasets and DSE trial tables

Runtime datasets use the header ``cell_count,stage,vcpus,runtime_s`` with
lowercase stage names. Trial tables are plot-ready: one row per trial with the
objective (empty for failed trials) and the best-so-far objective.
"""

from pathlib import Path
from typing import TYPE_CHECKING, List, Sequence, Union

import pandas as pd
from pydantic import ValidationError

from edaflow.errors import MalformedDocument
from edaflow.models.flow import StageKind

if TYPE_CHECKING:
    from edaflow.services.runtime_predictor import RuntimeSample

DATASET_COLUMNS = ["cell_count", "stage", "vcpus", "runtime_s"]
TRIAL_COLUMNS = ["trial_index", "objective", "best_so_far", "fault_code"]


def load_dataset_csv(path: Union[str, Path]) -> List["RuntimeSample"]:
    """
    Read a runtime dataset.

    Raises:
        MalformedDocument: missing columns or rows that violate sample invariants.
    """
    from edaflow.services.runtime_predictor import RuntimeSample

    try:
        df = pd.read_csv(path, dtype={"stage": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"{path}: unreadable CSV: {exc}") from exc

    missing = [col for col in DATASET_COLUMNS if col not in df.columns]
    if missing:
        raise MalformedDocument(f"{path}: missing columns {missing}")

    samples = []
    for row_number, row in enumerate(df[DATASET_COLUMNS].itertuples(index=False), start=2):
        try:
            samples.append(RuntimeSample(
                cell_count=int(row.cell_count),
                stage=StageKind(str(row.stage).strip().lower()),
                vcpus=int(row.vcpus),
                runtime_s=float(row.runtime_s),
            ))
        except (ValueError, ValidationError) as exc:
            raise MalformedDocument(f"{path}: line {row_number}: {exc}") from exc
    return samples


def save_dataset_csv(samples: Sequence["RuntimeSample"], path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        [(s.cell_count, s.stage.value, s.vcpus, s.runtime_s) for s in samples],
        columns=DATASET_COLUMNS,
    )
    df.to_csv(target, index=False)
    return target


def trials_frame(trials) -> pd.DataFrame:
    """Tabulate DSE trials; failed trials keep a NaN objective."""
    rows = []
    best = None
    for trial in trials:
        objective = trial.objective
        if objective is not None and (best is None or objective < best):
            best = objective
        rows.append((trial.index, objective, best, trial.fault_code or ""))
    return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def save_trials_csv(trials, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    trials_frame(trials).to_csv(target, index=False)
    return target
