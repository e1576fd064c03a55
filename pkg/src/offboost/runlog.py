"""Append-only training log with a fixed, versioned CSV schema."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .errors import FormatError

SCHEMA_VERSION = 1

COLUMNS = (
    "env_step",
    "wall_ms",
    "eval_return_mean",
    "eval_return_std",
    "success_rate",
    "loss_q_pi",
    "loss_q_mu",
    "loss_v_mu",
    "loss_actor",
    "alpha",
    "gate_fraction",
    "v_pi_mean",
    "v_mu_mean",
    "seed",
    "run_id",
)

_FLOAT_COLS = set(COLUMNS) - {"env_step", "wall_ms", "seed", "run_id"}


@dataclass
class RunLog:
    """Rows keyed by COLUMNS; `extras` carries non-CSV diagnostics such as the
    per-checkpoint behavior-clone gradient norms at gate-zero states."""

    rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def append(self, **kwargs) -> None:
        unknown = set(kwargs) - set(COLUMNS)
        if unknown:
            raise FormatError(f"unknown log columns: {sorted(unknown)}")
        missing = set(COLUMNS) - set(kwargs)
        if missing:
            raise FormatError(f"missing log columns: {sorted(missing)}")
        if self.rows and kwargs["env_step"] <= self.rows[-1]["env_step"]:
            raise FormatError("env_step must be strictly increasing within a run")
        self.rows.append(dict(kwargs))

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow([_format_cell(row[c]) for c in COLUMNS])

    @classmethod
    def load_csv(cls, path) -> "RunLog":
        log = cls()
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != list(COLUMNS):
                raise FormatError(f"{path}: unexpected header {header}")
            for raw in reader:
                row = {}
                for name, cell in zip(COLUMNS, raw):
                    if name in ("env_step", "wall_ms", "seed"):
                        row[name] = int(cell)
                    elif name == "run_id":
                        row[name] = cell
                    else:
                        row[name] = float(cell) if cell != "" else math.nan
                log.rows.append(row)
        return log


def _format_cell(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)  # shortest round-trip representation
    return str(v)
