"""Nested k-fold patient splits (train / validation / test per fold)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InputError


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[Fold, ...]
    seed: int
    stratified: bool

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "stratified": self.stratified,
            "folds": [{"train": list(f.train), "val": list(f.val), "test": list(f.test)} for f in self.folds],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SplitPlan":
        folds = tuple(Fold(tuple(f["train"]), tuple(f["val"]), tuple(f["test"])) for f in d["folds"])
        return cls(folds, int(d["seed"]), bool(d["stratified"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _shuffled(items: list[str], seed: int, *tags: int) -> list[str]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, *tags]))
    return [items[i] for i in rng.permutation(len(items))]


def nested_cv_split(patient_ids, labels=None, k: int = 5, seed: int = 0, stratified: bool = True,
                    val_fraction: float = 0.2) -> SplitPlan:
    """Outer fold ``f`` is the test set; the remainder is split into
    validation (``val_fraction`` of it, rounded, per class) and training.

    Patients of each stratum are shuffled once and dealt to folds in turn,
    so test sets partition the cohort and per-fold class counts differ by at
    most one from the proportional share.
    """
    ids = [str(p) for p in patient_ids]
    if len(set(ids)) != len(ids):
        raise InputError("patient IDs must be unique")
    if k < 2:
        raise InputError("k must be >= 2")
    if stratified:
        if labels is None or len(labels) != len(ids):
            raise InputError("stratified splitting needs one label per patient")
        y = [bool(v) for v in labels]
        strata = [[p for p, v in zip(ids, y) if v == c] for c in (False, True)]
        for c, s in zip(("negative", "positive"), strata):
            if len(s) < k:
                raise DegenerateDataError(f"{c} class has {len(s)} patients, fewer than k={k}")
    else:
        if len(ids) < k:
            raise DegenerateDataError(f"{len(ids)} patients cannot fill {k} folds")
        strata = [ids]

    fold_of = {}
    offset = 0
    for si, stratum in enumerate(strata):
        for j, p in enumerate(_shuffled(sorted(stratum), seed, si)):
            # continue dealing where the previous stratum stopped to balance fold sizes
            fold_of[p] = (offset + j) % k
        offset += len(stratum)

    folds = []
    for f in range(k):
        test = [p for p in ids if fold_of[p] == f]
        val, train = [], []
        for si, stratum in enumerate(strata):
            rest = _shuffled(sorted(p for p in stratum if fold_of[p] != f), seed, 1000 + f, si)
            n_val = int(round(val_fraction * len(rest)))
            val += rest[:n_val]
            train += rest[n_val:]
        order = {p: i for i, p in enumerate(ids)}
        folds.append(Fold(tuple(sorted(train, key=order.get)), tuple(sorted(val, key=order.get)),
                          tuple(sorted(test, key=order.get))))
    return SplitPlan(tuple(folds), seed, stratified)
