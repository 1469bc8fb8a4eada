"""Greedy minimum-redundancy maximum-relevance ranking on binned mutual information."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

TIE_TOL = 1e-12


class MrmrError(ValueError):
    pass


def default_bins(n_rows: int) -> int:
    return max(2, int(math.isqrt(n_rows)))


def discretize(x, bins: int) -> np.ndarray:
    """Equal-frequency bin codes.

    Edges are data values (the order statistics at k*n/bins), and a value's
    bin is the number of edges <= it. Equal values always share a bin and a
    strictly increasing transform of ``x`` gives the same codes.
    """
    x = np.asarray(x, dtype=float)
    if bins < 2:
        raise MrmrError("bins must be >= 2")
    if not np.all(np.isfinite(x)):
        raise MrmrError("column contains non-finite values")
    n = x.shape[0]
    srt = np.sort(x)
    edges = srt[[(k * n) // bins for k in range(1, bins)]]
    return np.searchsorted(edges, x, side="right")


def _codes(labels) -> np.ndarray:
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.ravel()


def mi_discrete(a, b) -> float:
    """Mutual information (nats) between two discrete code vectors."""
    a = _codes(a)
    b = _codes(b)
    n = a.shape[0]
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    pab = table / n
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    nz = pab > 0
    mi = float(np.sum(pab[nz] * np.log(pab[nz] / (pa @ pb)[nz])))
    return max(mi, 0.0)


def mutual_information(x, y, bins: int | None = None) -> float:
    """I(x; y) in nats with ``x`` equal-frequency binned and ``y`` taken as labels."""
    x = np.asarray(x, dtype=float)
    bins = default_bins(x.shape[0]) if bins is None else bins
    return mi_discrete(discretize(x, bins), y)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    target: np.ndarray
    columns: Sequence[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.target = np.asarray(self.target)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise MrmrError("values must be (rows, len(columns))")
        if not np.all(np.isfinite(self.values)):
            raise MrmrError("feature matrix contains undefined values; impute first")
        if np.unique(self.target).size < 2:
            raise MrmrError("need at least two classes")


@dataclass
class MrmrRanking:
    features: list
    relevance: list
    redundancy: list
    scores: list

    def rows(self):
        for i, f in enumerate(self.features):
            yield i + 1, f, self.relevance[i], self.redundancy[i], self.scores[i]


def rank(m: FeatureMatrix, k: int, bins: int | None = None) -> MrmrRanking:
    """Greedy mRMR in difference form.

    Step 1 takes argmax I(f; y). Later steps maximize
    I(f; y) - mean_{g in S} I(f; g). Scores within 1e-12 count as tied; ties
    go to the lower redundancy, then to the lower column index.
    """
    n_rows, n_cols = m.values.shape
    if not 1 <= k <= n_cols:
        raise MrmrError(f"k must lie in [1, {n_cols}]")
    bins = default_bins(n_rows) if bins is None else bins
    codes = [discretize(m.values[:, j], bins) for j in range(n_cols)]
    rel = np.array([mi_discrete(c, m.target) for c in codes])
    pair = {}

    def mi_pair(i, j):
        key = (min(i, j), max(i, j))
        if key not in pair:
            pair[key] = mi_discrete(codes[i], codes[j])
        return pair[key]

    chosen: list[int] = []
    out = MrmrRanking([], [], [], [])
    remaining = list(range(n_cols))
    for _ in range(k):
        best = None
        for j in remaining:
            red = float(np.mean([mi_pair(j, g) for g in chosen])) if chosen else 0.0
            score = rel[j] - red
            cand = (score, red, j)
            if best is None:
                best = cand
                continue
            if score > best[0] + TIE_TOL:
                best = cand
            elif abs(score - best[0]) <= TIE_TOL and red < best[1] - TIE_TOL:
                best = cand
        score, red, j = best
        chosen.append(j)
        remaining.remove(j)
        out.features.append(m.columns[j])
        out.relevance.append(float(rel[j]))
        out.redundancy.append(red)
        out.scores.append(float(score))
    return out


def write_ranking_csv(ranking: MrmrRanking, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "relevance", "redundancy", "score"])
        for r, f, rel, red, sc in ranking.rows():
            w.writerow([r, f, repr(rel), repr(red), repr(sc)])
