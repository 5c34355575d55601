"""Classification, ranking and significance metrics for function and statement predictions."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from scipy import stats


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricsError(f"negative confusion count: {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def add(self, truth: bool, pred: bool) -> None:
        if truth and pred:
            self.tp += 1
        elif truth:
            self.fn += 1
        elif pred:
            self.fp += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ClassificationMetrics:
    Mcc: float
    Pre: float
    Re: float
    F1: float


def classification_metrics(counts: ConfusionCounts) -> ClassificationMetrics:
    """Mcc in [-1, 1]; Pre/Re/F1 as percentages. Zero denominators give 0."""
    if counts.total == 0:
        raise MetricsError("metrics undefined for empty confusion counts")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    pre = tp / (tp + fp) if tp + fp else 0.0
    re = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pre * re / (pre + re) if pre + re else 0.0
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / denom if denom else 0.0
    return ClassificationMetrics(mcc, 100 * pre, 100 * re, 100 * f1)


@dataclass
class FunctionPrediction:
    """Model output for one function alongside its ground truth.

    ``line_scores`` and ``line_probs`` have one entry per source line and use
    ``None`` for lines that carry no tokens.
    """

    id: str
    y_true: int
    y_prob: float
    flaw_lines: frozenset[int] = frozenset()
    line_scores: list[float | None] | None = None
    line_probs: list[float | None] | None = None
    n_lines: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flaw_lines"] = sorted(self.flaw_lines)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionPrediction":
        return cls(d["id"], d["y_true"], d["y_prob"], frozenset(d.get("flaw_lines", ())),
                   d.get("line_scores"), d.get("line_probs"), d.get("n_lines"))


def function_counts(preds: Iterable[FunctionPrediction], threshold: float = 0.5) -> ConfusionCounts:
    c = ConfusionCounts()
    for p in preds:
        c.add(bool(p.y_true), p.y_prob >= threshold)
    return c


def _statement_counts(preds, threshold, gated):
    c = ConfusionCounts()
    for p in preds:
        fn_positive = p.y_prob >= threshold
        if p.line_probs is None:
            if gated and not fn_positive and p.n_lines is not None:
                for line in range(p.n_lines):
                    c.add(line in p.flaw_lines, False)
                continue
            raise MetricsError(f"function {p.id!r} has no line probabilities")
        for line, prob in enumerate(p.line_probs):
            if prob is None:
                continue
            pred = prob >= threshold and (fn_positive or not gated)
            c.add(line in p.flaw_lines, pred)
    return c


def two_phase_statement_eval(preds: Sequence[FunctionPrediction], threshold: float = 0.5) -> ConfusionCounts:
    """Line predictions only count on functions the function head calls vulnerable."""
    return _statement_counts(preds, threshold, gated=True)


def one_phase_statement_eval(preds: Sequence[FunctionPrediction], threshold: float = 0.5) -> ConfusionCounts:
    return _statement_counts(preds, threshold, gated=False)


@dataclass
class RankingRecord:
    order: list[int]
    flaw_lines: frozenset[int]

    @classmethod
    def from_scores(cls, scores: Sequence[float | None], flaw_lines: Iterable[int]) -> "RankingRecord":
        scored = [(s, l) for l, s in enumerate(scores) if s is not None]
        # descending score, ties by ascending line index
        order = [l for s, l in sorted(scored, key=lambda t: (-t[0], t[1]))]
        return cls(order, frozenset(flaw_lines))

    def flaw_ranks(self) -> list[int]:
        return [r for r, l in enumerate(self.order, start=1) if l in self.flaw_lines]


@dataclass
class RankingMetrics:
    top1: float
    top3: float
    top5: float
    MFR: float
    MAR: float
    n_functions: int
    n_unrankable: int = 0


def ranking_metrics(records: Sequence[RankingRecord]) -> RankingMetrics:
    """Top-k hit rate (any flaw line in the first k), mean first rank and mean average rank.

    Records whose flaw lines all lack scores are skipped and counted in
    ``n_unrankable``.
    """
    if not records:
        raise MetricsError("ranking metrics need at least one vulnerable function")
    hits = {1: 0, 3: 0, 5: 0}
    first, avg = [], []
    skipped = 0
    for rec in records:
        if not rec.flaw_lines:
            raise MetricsError("ranking record without flaw lines")
        ranks = rec.flaw_ranks()
        if not ranks:
            skipped += 1
            continue
        for k in hits:
            hits[k] += ranks[0] <= k
        first.append(ranks[0])
        avg.append(sum(ranks) / len(ranks))
    n = len(first)
    if n == 0:
        raise MetricsError("no record has a scored flaw line")
    return RankingMetrics(100 * hits[1] / n, 100 * hits[3] / n, 100 * hits[5] / n,
                          sum(first) / n, sum(avg) / n, n, skipped)


def composite_score(two_phase_func_f1: float, two_phase_stmt_f1: float,
                    one_phase_stmt_f1: float, top1: float) -> float:
    vals = (two_phase_func_f1, two_phase_stmt_f1, one_phase_stmt_f1, top1)
    if any(v is None for v in vals):
        raise MetricsError("composite score needs all four metrics")
    return sum(vals) / 4


@dataclass
class TTestResult:
    p_value: float
    t_stat: float
    mean_diff: float
    n: int
    degenerate: bool = False

    @property
    def stars(self) -> str:
        if self.p_value < 0.001:
            return "***"
        if self.p_value < 0.01:
            return "**"
        if self.p_value < 0.05:
            return "*"
        return "n.s."

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def paired_t_test(runs_a: Sequence[float], runs_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test.

    Zero variance of the differences is flagged as degenerate: ``p = 1`` when
    the mean difference is zero, ``p = 0`` otherwise.
    """
    if len(runs_a) != len(runs_b):
        raise MetricsError("paired samples must have equal length")
    n = len(runs_a)
    if n < 2:
        raise MetricsError("paired t-test needs at least two pairs")
    d = [a - b for a, b in zip(runs_a, runs_b)]
    mean = sum(d) / n
    var = sum((x - mean) ** 2 for x in d) / (n - 1)
    if var <= 1e-24 * max(1.0, mean * mean):
        if abs(mean) <= 1e-12:
            return TTestResult(1.0, 0.0, 0.0, n, degenerate=True)
        return TTestResult(0.0, math.copysign(math.inf, mean), mean, n, degenerate=True)
    t = mean / math.sqrt(var / n)
    p = 2 * stats.t.sf(abs(t), df=n - 1)
    return TTestResult(float(p), t, mean, n)


@dataclass
class MetricsReport:
    function: ClassificationMetrics
    function_counts: ConfusionCounts
    stmt_two_phase: ClassificationMetrics | None = None
    stmt_one_phase: ClassificationMetrics | None = None
    ranking: RankingMetrics | None = None
    score: float | None = None
    n_functions: int = 0
    n_unscored_lines: int = 0
    n_unscored_flaw_lines: int = 0
    header: dict = field(default_factory=dict)

    @property
    def has_statement(self) -> bool:
        return self.stmt_two_phase is not None

    def selection_score(self) -> float:
        return self.score if self.score is not None else self.function.F1

    def to_dict(self) -> dict:
        d = {
            "header": self.header,
            "n_functions": self.n_functions,
            "function": asdict(self.function),
            "function_counts": asdict(self.function_counts),
        }
        if self.has_statement:
            d["statement_two_phase"] = asdict(self.stmt_two_phase)
            d["statement_one_phase"] = asdict(self.stmt_one_phase)
            d["ranking"] = asdict(self.ranking) if self.ranking is not None else None
            d["score"] = self.score
            d["n_unscored_lines"] = self.n_unscored_lines
            d["n_unscored_flaw_lines"] = self.n_unscored_flaw_lines
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self, name: str = "DCVD") -> str:
        """Aligned text rows laid out like the classification and ranking tables."""
        def cls(m):
            if m is None:
                return ["--"] * 4
            return [f"{m.Mcc:.4f}", f"{m.Pre:.2f}", f"{m.Re:.2f}", f"{m.F1:.2f}"]

        cols = ["Mcc", "Pre", "Re", "F1"]
        head1 = ["Setting"] + [f"Func-{c}" for c in cols] + [f"2P-Stmt-{c}" for c in cols] + [f"1P-Stmt-{c}" for c in cols]
        row1 = [name] + cls(self.function) + cls(self.stmt_two_phase) + cls(self.stmt_one_phase)
        r = self.ranking
        head2 = ["Setting", "Top-1", "Top-3", "Top-5", "MFR", "MAR", "Score"]
        row2 = [name] + ([f"{r.top1:.2f}", f"{r.top3:.2f}", f"{r.top5:.2f}", f"{r.MFR:.2f}", f"{r.MAR:.2f}"]
                         if r is not None else ["--"] * 5) + [f"{self.score:.2f}" if self.score is not None else "--"]
        out = []
        for head, row in ((head1, row1), (head2, row2)):
            widths = [max(len(h), len(v)) for h, v in zip(head, row)]
            out.append("  ".join(h.rjust(w) for h, w in zip(head, widths)))
            out.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
            out.append("")
        if self.header:
            out.append("overrides: " + ", ".join(f"{k}={v}" for k, v in sorted(self.header.get("overrides", {}).items())))
        return "\n".join(out).rstrip() + "\n"

    def csv_row(self) -> dict:
        def g(m, attr):
            return getattr(m, attr) if m is not None else ""
        row = {f"func_{a}": g(self.function, a) for a in ("Mcc", "Pre", "Re", "F1")}
        row.update({f"stmt2p_{a}": g(self.stmt_two_phase, a) for a in ("Mcc", "Pre", "Re", "F1")})
        row.update({f"stmt1p_{a}": g(self.stmt_one_phase, a) for a in ("Mcc", "Pre", "Re", "F1")})
        row.update({a: g(self.ranking, a) for a in ("top1", "top3", "top5", "MFR", "MAR")})
        row["score"] = "" if self.score is None else self.score
        return row


def build_report(preds: Sequence[FunctionPrediction], threshold: float = 0.5,
                 statement: bool = True) -> MetricsReport:
    if not preds:
        raise MetricsError("no predictions to evaluate")
    fc = function_counts(preds, threshold)
    report = MetricsReport(classification_metrics(fc), fc, n_functions=len(preds))
    if not statement:
        return report
    two = two_phase_statement_eval(preds, threshold)
    one = one_phase_statement_eval(preds, threshold)
    report.stmt_two_phase = classification_metrics(two)
    report.stmt_one_phase = classification_metrics(one)
    records = []
    for p in preds:
        if p.line_probs is not None:
            report.n_unscored_lines += sum(v is None for v in p.line_probs)
        if p.line_scores is None:
            continue
        report.n_unscored_flaw_lines += sum(
            1 for l in p.flaw_lines if l >= len(p.line_scores) or p.line_scores[l] is None)
        if p.y_true and p.flaw_lines:
            records.append(RankingRecord.from_scores(p.line_scores, p.flaw_lines))
    if records:
        try:
            report.ranking = ranking_metrics(records)
        except MetricsError:
            report.ranking = None
    if report.ranking is not None:
        report.score = composite_score(report.function.F1, report.stmt_two_phase.F1,
                                       report.stmt_one_phase.F1, report.ranking.top1)
    return report


def reports_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0].keys())
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    w = csv.DictWriter(buf, fieldnames=fields)
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
