"""BigVul-style record loading and deterministic splitting."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SPLIT_NAMES = ("train", "valid", "test")


class DatasetError(ValueError):
    """Raised for malformed records, bad ratios or empty inputs."""


@dataclass(frozen=True)
class CodeFunction:
    id: str
    source: str
    y_f: int
    flaw_lines: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.source:
            raise DatasetError(f"record {self.id!r}: empty source")
        if self.y_f not in (0, 1):
            raise DatasetError(f"record {self.id!r}: label must be 0 or 1, got {self.y_f!r}")
        if self.y_f == 0 and self.flaw_lines:
            raise DatasetError(f"record {self.id!r}: negative sample carries flaw lines")
        bad = [i for i in self.flaw_lines if i < 0 or i >= self.n_lines]
        if bad:
            raise DatasetError(
                f"record {self.id!r}: flaw line index {sorted(bad)} out of range "
                f"for {self.n_lines} lines"
            )

    @property
    def lines(self) -> list[str]:
        return self.source.split("\n")

    @property
    def n_lines(self) -> int:
        return self.source.count("\n") + 1

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "func": self.source,
            "target": self.y_f,
            "flaw_line_index": sorted(self.flaw_lines),
        }


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    sample_ids: tuple[str, ...]
    seed: int | None = None

    def __len__(self):
        return len(self.sample_ids)

    def to_manifest(self) -> dict:
        return {"name": self.name, "seed": self.seed, "ids": list(self.sample_ids)}

    @classmethod
    def from_manifest(cls, data: dict) -> "DatasetSplit":
        return cls(data["name"], tuple(data["ids"]), data.get("seed"))


def _parse_flaw_index(value, rec_id: str) -> list[int]:
    if value is None or value == "":
        return []
    if isinstance(value, str):
        # BigVul dumps sometimes store the list as "3,7"
        parts = [p.strip() for p in value.strip("[]").split(",") if p.strip()]
        try:
            return [int(p) for p in parts]
        except ValueError as exc:
            raise DatasetError(f"record {rec_id!r}: bad flaw_line_index {value!r}") from exc
    try:
        return [int(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"record {rec_id!r}: bad flaw_line_index {value!r}") from exc


def record_to_function(rec: dict) -> CodeFunction:
    missing = [k for k in ("id", "func", "target") if k not in rec]
    if missing:
        raise DatasetError(f"record missing fields {missing}")
    rec_id = str(rec["id"])
    flaws = _parse_flaw_index(rec.get("flaw_line_index"), rec_id)
    return CodeFunction(
        id=rec_id,
        source=rec["func"],
        y_f=int(rec["target"]),
        flaw_lines=frozenset(flaws),
    )


def load_records(path: str | Path) -> list[CodeFunction]:
    """Read a JSONL file with one ``{id, func, target, flaw_line_index}`` object per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            fn = record_to_function(rec)
            if fn.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {fn.id!r}")
            seen.add(fn.id)
            out.append(fn)
    return out


def save_records(records: Iterable[CodeFunction], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for fn in records:
            fh.write(json.dumps(fn.to_record()) + "\n")


def make_splits(
    records: Sequence[CodeFunction],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Shuffle ids with ``seed`` and cut them into train/valid/test by ``ratios``.

    Sizes are floored for valid/test and the remainder goes to train.
    """
    if not records:
        raise DatasetError("cannot split an empty record list")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DatasetError(f"split ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    ids = sorted(fn.id for fn in records)
    random.Random(seed).shuffle(ids)
    n = len(ids)
    n_valid = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_valid - n_test
    parts = (ids[:n_train], ids[n_train:n_train + n_valid], ids[n_train + n_valid:])
    return tuple(DatasetSplit(name, tuple(p), seed) for name, p in zip(SPLIT_NAMES, parts))


def sample_fraction(split: DatasetSplit, fraction: float, seed: int = 0) -> DatasetSplit:
    """Deterministic random subset holding ``floor(fraction * len)`` ids (at least one)."""
    if not 0 < fraction <= 1:
        raise DatasetError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return split
    k = max(1, int(math.floor(fraction * len(split) + 1e-9)))
    chosen = set(random.Random(seed).sample(range(len(split)), k))
    ids = tuple(sid for i, sid in enumerate(split.sample_ids) if i in chosen)
    return DatasetSplit(split.name, ids, seed)


def write_manifests(splits: Iterable[DatasetSplit], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for split in splits:
        p = out_dir / f"{split.name}.json"
        p.write_text(json.dumps(split.to_manifest(), indent=2))
        paths.append(p)
    return paths


def read_manifest(path: str | Path) -> DatasetSplit:
    return DatasetSplit.from_manifest(json.loads(Path(path).read_text()))


def select(records: Sequence[CodeFunction], split: DatasetSplit) -> list[CodeFunction]:
    by_id = {fn.id: fn for fn in records}
    missing = [sid for sid in split.sample_ids if sid not in by_id]
    if missing:
        raise DatasetError(f"split {split.name!r} references unknown ids {missing[:5]}")
    return [by_id[sid] for sid in split.sample_ids]
