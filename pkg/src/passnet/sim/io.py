"""CSV export of trajectories.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces the in-memory arrays bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["CsvTable", "write_csv", "write_table", "read_csv", "epoch_table"]


@dataclass
class CsvTable:
    header: list
    data: np.ndarray

    def __getitem__(self, label) -> np.ndarray:
        return self.data[:, self.header.index(label)]


def _fmt(v) -> str:
    return "" if np.isnan(v) else repr(float(v))


def epoch_table(traj, epoch) -> CsvTable:
    segs = traj.epoch_segments(epoch)
    s0 = segs[0]
    header = ["time", *s0.state_labels, *s0.input_labels]
    rows = [np.column_stack([s.t, s.x, s.u]) for s in segs]
    return CsvTable(header, np.concatenate(rows))


def write_table(path, table: CsvTable):
    """Write ``table`` with a header row; ``nan`` becomes an empty field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.data:
            w.writerow([_fmt(v) for v in row])


def write_csv(traj, directory, stem: str = "trajectory") -> list:
    """Write one file per epoch and a concatenated file with an ``epoch`` column.

    In the concatenated file the columns are the union of all labels in
    first-seen order; states absent from an epoch are left empty.
    Returns the written paths, concatenated file first.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    labels = []
    for seg in traj.segments:
        for lab in (*seg.state_labels, *seg.input_labels):
            if lab not in labels:
                labels.append(lab)
    blocks = []
    for seg in traj.segments:
        block = np.full((len(seg.t), len(labels) + 2), np.nan)
        block[:, 0] = seg.t
        block[:, 1] = seg.epoch
        cols = np.column_stack([seg.x, seg.u])
        for k, lab in enumerate((*seg.state_labels, *seg.input_labels)):
            block[:, 2 + labels.index(lab)] = cols[:, k]
        blocks.append(block)
    full = directory / f"{stem}.csv"
    write_table(full, CsvTable(["time", "epoch", *labels], np.concatenate(blocks)))
    paths.append(full)
    for epoch in traj.epochs:
        p = directory / f"{stem}_epoch{epoch}.csv"
        write_table(p, epoch_table(traj, epoch))
        paths.append(p)
    return paths


def read_csv(path) -> CsvTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in rows[1:]], dtype=float)
    return CsvTable(header, data.reshape(len(rows) - 1, len(header)))
