"""Benchmark baskets, mean primary error (MPE), leaderboards and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

from .errors import EmptyInput, InvalidArgument
from .metrics import AlignmentMode, MetricSpec


@dataclass(frozen=True)
class BasketEntry:
    benchmark_id: str
    spec: MetricSpec
    # Training dataset whose in-domain score this benchmark represents.
    dataset_id: str | None = None

    @property
    def excludes(self) -> str:
        return self.benchmark_id if self.dataset_id is None else self.dataset_id


@dataclass(frozen=True)
class BenchmarkBasket:
    name: str
    entries: tuple[BasketEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise InvalidArgument(f"basket {self.name!r} is empty")
        ids = [e.benchmark_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidArgument(f"basket {self.name!r} repeats a benchmark id")

    @property
    def benchmark_ids(self) -> list[str]:
        return [e.benchmark_id for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "entries": [
                {"benchmark_id": e.benchmark_id, "dataset_id": e.excludes, "spec": e.spec.to_dict()}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkBasket":
        try:
            entries = [
                BasketEntry(e["benchmark_id"], MetricSpec.from_dict(e["spec"]), e.get("dataset_id"))
                for e in doc["entries"]
            ]
            return cls(doc["name"], tuple(entries))
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"malformed basket document: missing {exc}") from None


_ROOT = AlignmentMode("root_translation")
_PA = AlignmentMode("procrustes")

WHOLE_BODY = BenchmarkBasket(
    "whole_body",
    (
        BasketEntry("AGORA", MetricSpec("PVE", "all", _ROOT), "AGORA"),
        BasketEntry("UBody", MetricSpec("PVE", "all", _ROOT), "UBody"),
        BasketEntry("EgoBody", MetricSpec("PVE", "all", _ROOT), "EgoBody-EgoSet"),
        BasketEntry("3DPW", MetricSpec("MPJPE", "all", _ROOT), "3DPW"),
        BasketEntry("EHF", MetricSpec("PVE", "all", _ROOT), "EHF"),
    ),
)
_HAND_BENCHMARKS = ("AGORA", "UBody", "EgoBody", "EHF", "ARCTIC", "SynHand")
_HAND_DATASETS = {"EgoBody": "EgoBody-EgoSet"}
HAND = BenchmarkBasket(
    "hand",
    tuple(BasketEntry(b, MetricSpec("PVE", "hands", _ROOT), _HAND_DATASETS.get(b, b)) for b in _HAND_BENCHMARKS),
)
HAND_PA = BenchmarkBasket(
    "hand_pa",
    tuple(BasketEntry(b, MetricSpec("PVE", "hands", _PA), _HAND_DATASETS.get(b, b)) for b in _HAND_BENCHMARKS),
)
BASKETS = {b.name: b for b in (WHOLE_BODY, HAND, HAND_PA)}


def get_basket(name_or_path: str) -> BenchmarkBasket:
    if name_or_path in BASKETS:
        return BASKETS[name_or_path]
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            return BenchmarkBasket.from_dict(json.load(fh))
    except FileNotFoundError:
        raise InvalidArgument(
            f"unknown basket {name_or_path!r}; built-ins are {sorted(BASKETS)}"
        ) from None
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"basket file {name_or_path!r} is not valid JSON: {exc}") from None


@dataclass
class LeaderboardEntry:
    subject_id: str
    per_benchmark_mm: dict[str, float]
    trained_on: frozenset[str] = field(default_factory=frozenset)
    mpe_mm: float | None = None
    rank: int | None = None

    def __post_init__(self):
        self.trained_on = frozenset(self.trained_on)
        self.per_benchmark_mm = {k: float(v) for k, v in self.per_benchmark_mm.items()}

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "per_benchmark_mm": dict(self.per_benchmark_mm),
            "trained_on": sorted(self.trained_on),
            "mpe_mm": self.mpe_mm,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LeaderboardEntry":
        return cls(
            doc["subject_id"],
            doc["per_benchmark_mm"],
            frozenset(doc.get("trained_on", ())),
            doc.get("mpe_mm"),
            doc.get("rank"),
        )


def included_benchmarks(entry: LeaderboardEntry, basket: BenchmarkBasket) -> list[str]:
    return [e.benchmark_id for e in basket.entries if e.excludes not in entry.trained_on]


def mpe(entry: LeaderboardEntry, basket: BenchmarkBasket) -> float:
    """Mean primary error over the basket, skipping benchmarks of datasets the subject trained on."""
    included = included_benchmarks(entry, basket)
    if not included:
        raise EmptyInput(f"{entry.subject_id}: every benchmark in {basket.name!r} is excluded")
    missing = [b for b in included if b not in entry.per_benchmark_mm]
    if missing:
        raise InvalidArgument(f"{entry.subject_id}: no value for benchmark(s) {', '.join(missing)}")
    values = [entry.per_benchmark_mm[b] for b in included]
    bad = [v for v in values if not math.isfinite(v) or v < 0]
    if bad:
        raise InvalidArgument(f"{entry.subject_id}: invalid error value {bad[0]!r}")
    return math.fsum(values) / len(values)


def rank_entries(entries, basket: BenchmarkBasket) -> list[LeaderboardEntry]:
    """Ascending MPE; equal MPEs fall back to subject id order. Ranks are 1..N."""
    scored = [replace(e, mpe_mm=mpe(e, basket)) for e in entries]
    ids = [e.subject_id for e in scored]
    if len(set(ids)) != len(ids):
        raise InvalidArgument("duplicate subject ids in leaderboard")
    scored.sort(key=lambda e: (e.mpe_mm, e.subject_id))
    for i, e in enumerate(scored, start=1):
        e.rank = i
    return scored


def select_topk(leaderboard, k: int) -> list[str]:
    if k < 0 or k > len(leaderboard):
        raise InvalidArgument(f"k={k} outside 0..{len(leaderboard)}")
    ordered = sorted(leaderboard, key=lambda e: e.rank)
    return [e.subject_id for e in ordered[:k]]


@dataclass(frozen=True)
class NmCheck:
    passed: bool
    gap: float
    f1_vertices: float
    f1_joints: float


def nm_consistency_check(mve: float, nmve: float, mje: float, nmje: float, tolerance: float = 0.005) -> NmCheck:
    """Both normalized errors must imply the same detection F1."""
    for name, v in (("MVE", mve), ("NMVE", nmve), ("MJE", mje), ("NMJE", nmje)):
        if not v > 0:
            raise InvalidArgument(f"{name} must be positive, got {v}")
    f1_v, f1_j = mve / nmve, mje / nmje
    gap = abs(f1_v - f1_j)
    return NmCheck(gap <= tolerance, gap, f1_v, f1_j)


def _mm(value) -> str:
    return "" if value is None else f"{value:.1f}"


def _rows(leaderboard, basket: BenchmarkBasket):
    header = ["subject"] + basket.benchmark_ids + ["MPE", "rank"]
    rows = []
    for e in sorted(leaderboard, key=lambda e: (e.rank is None, e.rank or 0, e.subject_id)):
        rows.append(
            [e.subject_id]
            + [_mm(e.per_benchmark_mm.get(b)) for b in basket.benchmark_ids]
            + [_mm(e.mpe_mm), "" if e.rank is None else str(e.rank)]
        )
    return header, rows


def render_report(leaderboard, basket: BenchmarkBasket, fmt: str = "markdown") -> str:
    header, rows = _rows(leaderboard, basket)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        esc = [[c.replace("|", "\\|") for c in r] for r in [header] + rows]
        lines = ["| " + " | ".join(esc[0]) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in esc[1:]]
        return "\n".join(lines) + "\n"
    raise InvalidArgument(f"unknown report format {fmt!r}")


def leaderboard_to_dict(leaderboard, basket: BenchmarkBasket) -> dict:
    return {"basket": basket.to_dict(), "entries": [e.to_dict() for e in leaderboard]}


def leaderboard_from_dict(doc: dict):
    basket = BenchmarkBasket.from_dict(doc["basket"])
    return [LeaderboardEntry.from_dict(e) for e in doc["entries"]], basket


def read_table(text: str) -> list[LeaderboardEntry]:
    """Parse a per-benchmark value table.

    CSV with a ``subject`` column, optional ``trained_on`` (``;``-separated
    dataset ids) and one column per benchmark id; blank cells mean "not evaluated".
    """
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "subject" not in reader.fieldnames:
        raise InvalidArgument("table needs a 'subject' column")
    bench_cols = [c for c in reader.fieldnames if c not in ("subject", "trained_on")]
    entries = []
    for lineno, row in enumerate(reader, start=2):
        values = {}
        for col in bench_cols:
            cell = (row.get(col) or "").strip()
            if cell:
                try:
                    values[col] = float(cell)
                except ValueError:
                    raise InvalidArgument(f"table line {lineno}: {col}={cell!r} is not a number") from None
        trained = {t.strip() for t in (row.get("trained_on") or "").split(";") if t.strip()}
        entries.append(LeaderboardEntry(row["subject"], values, frozenset(trained)))
    return entries
