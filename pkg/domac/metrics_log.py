"""metrics.csv writer.

Long format: one row per (evaluation point, agent). The header is the same for
every variant; metrics a variant does not produce are empty fields.
"""
import csv
import os
import time
from typing import Optional

METRICS_COLUMNS = (
    "wall_time",
    "episode",
    "update_step",
    "variant",
    "seed",
    "agent",
    "eval_mean_return",
    "eval_std_return",
    "critic_loss",
    "actor_loss",
    "policy_entropy",
    "om_kld",
    "om_entropy",
    "om_accuracy",
)


def format_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return f"{float(value):.9g}"


class MetricsLog:
    """Single writer for metrics.csv."""

    def __init__(self, path, record_wall_time: bool = False, resume_after: Optional[int] = None):
        self.path = path
        self.record_wall_time = record_wall_time
        self.started = time.monotonic()
        directory = os.path.dirname(os.fspath(path))
        if directory and not os.path.exists(directory):
            os.makedirs(directory)
        if resume_after is not None and os.path.exists(path):
            truncate_after(path, resume_after)
        else:
            with open(path, "w", newline="", encoding="utf-8") as handle:
                csv.writer(handle, lineterminator="\n").writerow(METRICS_COLUMNS)

    def write(self, **row):
        unknown = set(row) - set(METRICS_COLUMNS)
        if unknown:
            raise KeyError(f"unknown metrics columns {sorted(unknown)}")
        row["wall_time"] = (time.monotonic() - self.started) if self.record_wall_time else None
        with open(self.path, "a", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([row.get(c) if isinstance(row.get(c), str) else format_number(row.get(c))
                             for c in METRICS_COLUMNS])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def truncate_after(path, update_step: int):
    """Drop rows past ``update_step`` so a resumed run continues the stream."""
    rows = [r for r in read_rows(path) if int(r["update_step"]) <= update_step]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
