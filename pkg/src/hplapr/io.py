"""CSV and JSON file formats.

Feature CSV: header ``id,label,group,f0,...,f{d-1}``; ``label`` and ``group``
may be empty.  Matrix CSV: one row per line, no header, rows in vertex order.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .graph import FeatureTable


class FormatError(ValueError):
    pass


def _int_or_none(s: str):
    s = s.strip()
    if not s:
        return None
    try:
        return int(s)
    except ValueError:
        raise FormatError(f"expected an integer, got {s!r}") from None


def read_feature_csv(path) -> FeatureTable:
    """Rows with an empty ``label`` get class label -1 (unlabeled)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such feature file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "label", "group"] or len(header) < 4:
        raise FormatError(f"{path}: header must start with id,label,group followed by feature columns")
    d = len(header) - 3
    ids, labels, groups, feats = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 3:
            raise FormatError(f"{path}:{lineno}: expected {d + 3} fields, got {len(row)}")
        ids.append(row[0])
        try:
            labels.append(_int_or_none(row[1]))
            groups.append(_int_or_none(row[2]))
            feats.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    has_labels = any(v is not None for v in labels)
    has_groups = any(v is not None for v in groups)
    if has_groups and any(g is None for g in groups):
        raise FormatError(f"{path}: group column is partially empty")
    y = np.array([-1 if v is None else v for v in labels]) if has_labels else None
    g = np.array(groups) if has_groups else None
    try:
        return FeatureTable(np.array(feats, dtype=float), y, g, ids)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_feature_csv(table: FeatureTable, path, labeled_mask=None) -> None:
    """Write ``table``; rows outside ``labeled_mask`` get an empty label."""
    n, d = table.features.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "group"] + [f"f{j}" for j in range(d)])
        for i in range(n):
            lab = ""
            if table.class_labels is not None and (labeled_mask is None or labeled_mask[i]):
                lab = int(table.class_labels[i])
                lab = "" if lab < 0 else lab
            grp = "" if table.group_labels is None else int(table.group_labels[i])
            w.writerow([table.ids[i], lab, grp] + [repr(float(v)) for v in table.features[i]])


def write_matrix_csv(M, path) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such matrix file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        M = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if M.ndim != 2:
        raise FormatError(f"{path}: rows have unequal lengths")
    return M


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
