"""Ground-truth matching, the three evaluation metrics, and the
leave-one-out protocol.

Matching is lenient: a hypothesis matches a reference event when their
intervals overlap (optionally by a minimum fraction of the reference
length) and, where requested, the labels agree. Matching is one-to-one
and greedy by overlap length. Speech and silence are never scored; the
caller filters them out via the scene's class inventory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EventRecord:
    """Minimal scored unit shared by hypotheses and references."""

    label: str
    start_s: float
    end_s: float
    cell_id: int = -1

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def overlap_length(a: EventRecord, b: EventRecord) -> float:
    return max(0.0, min(a.end_s, b.end_s) - max(a.start_s, b.start_s))


@dataclass
class Matching:
    pairs: list[tuple[int, int]]        # (hypothesis index, reference index)
    insertions: list[int]               # unmatched hypothesis indices
    deletions: list[int]                # unmatched reference indices


def match_events(
    hypotheses: list[EventRecord],
    references: list[EventRecord],
    require_class: bool = True,
    min_overlap_frac: float = 0.0,
) -> Matching:
    """Greedy one-to-one matching by overlap length, largest first.

    A candidate pair qualifies if the temporal overlap is positive (and at
    least `min_overlap_frac` of the reference length) and, when
    `require_class` is set, the labels agree.
    """
    candidates = []
    for hi, h in enumerate(hypotheses):
        for ri, r in enumerate(references):
            if require_class and h.label != r.label:
                continue
            ov = overlap_length(h, r)
            if ov <= 0 or ov < min_overlap_frac * r.duration:
                continue
            candidates.append((ov, hi, ri))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_h: set[int] = set()
    used_r: set[int] = set()
    pairs = []
    for _ov, hi, ri in candidates:
        if hi in used_h or ri in used_r:
            continue
        pairs.append((hi, ri))
        used_h.add(hi)
        used_r.add(ri)
    return Matching(
        pairs=sorted(pairs),
        insertions=[i for i in range(len(hypotheses)) if i not in used_h],
        deletions=[i for i in range(len(references)) if i not in used_r],
    )


def precision_recall_f(n_correct: int, n_hyp: int, n_ref: int) -> tuple[float, float, float]:
    precision = n_correct / n_hyp if n_hyp else 0.0
    recall = n_correct / n_ref if n_ref else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def aed_acc(
    hypotheses: list[EventRecord],
    references: list[EventRecord],
    min_overlap_frac: float = 0.0,
) -> tuple[float, float, float]:
    """Detection F-score: class-sensitive, overlap-matched instances."""
    matching = match_events(hypotheses, references, True, min_overlap_frac)
    return precision_recall_f(len(matching.pairs), len(hypotheses), len(references))


def classification_accuracy(decisions: list[str], truths: list[str]) -> float:
    """Fraction of known-endpoint events whose class decision is right."""
    if len(decisions) != len(truths):
        raise ValueError("decisions and truths must align one-to-one")
    if not truths:
        return 0.0
    return sum(d == t for d, t in zip(decisions, truths)) / len(truths)


def localization_accuracy(
    predicted_cells: list[list[int]],
    truth_cells: list[int],
    truth_labels: list[str],
) -> tuple[dict[str, float], float]:
    """Per-class correct-cell rates and their macro average.

    Each event may carry several candidate cells (both decision passes, or
    both response-map maxima); the event counts as correct when any
    candidate equals the truth cell.
    """
    if not (len(predicted_cells) == len(truth_cells) == len(truth_labels)):
        raise ValueError("per-event lists must align")
    per_class: dict[str, list[int]] = {}
    for cells, truth, label in zip(predicted_cells, truth_cells, truth_labels):
        per_class.setdefault(label, []).append(int(truth in cells))
    rates = {lab: float(np.mean(v)) for lab, v in sorted(per_class.items())}
    average = float(np.mean(list(rates.values()))) if rates else 0.0
    return rates, average


def localization_f(
    hypotheses: list[EventRecord],
    references: list[EventRecord],
    min_overlap_frac: float = 0.0,
) -> tuple[float, float, float]:
    """Event-level localization F-score for estimated end-points.

    Matching is class-agnostic (position is the quantity under test); a
    matched pair counts as correct only when the cells agree.
    """
    matching = match_events(hypotheses, references, False, min_overlap_frac)
    correct = sum(
        1 for hi, ri in matching.pairs if hypotheses[hi].cell_id == references[ri].cell_id
    )
    return precision_recall_f(correct, len(hypotheses), len(references))


@dataclass
class MetricReport:
    """One evaluation condition's scores plus the underlying counts."""

    condition: str = ""
    classification_acc: float | None = None
    precision: float | None = None
    recall: float | None = None
    f_score: float | None = None
    localization_per_class: dict[str, float] = field(default_factory=dict)
    localization_avg: float | None = None
    n_correct: int = 0
    n_ref: int = 0
    n_hyp: int = 0
    n_insertions: int = 0
    n_deletions: int = 0

    def __post_init__(self):
        for name in ("classification_acc", "precision", "recall", "f_score", "localization_avg"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} outside [0, 1]: {v}")
        if self.precision is not None and self.recall is not None and self.f_score is not None:
            p, r = self.precision, self.recall
            expected = 2 * p * r / (p + r) if p + r > 0 else 0.0
            if abs(self.f_score - expected) > 1e-9:
                raise ValueError("F-score inconsistent with precision/recall")

    def rows(self) -> list[tuple[str, str]]:
        out = [("condition", self.condition)]
        fmt = lambda v: f"{100 * v:.1f}"
        if self.classification_acc is not None:
            out.append(("classification_acc_pct", fmt(self.classification_acc)))
        if self.f_score is not None:
            out.append(("precision_pct", fmt(self.precision)))
            out.append(("recall_pct", fmt(self.recall)))
            out.append(("f_score_pct", fmt(self.f_score)))
        if self.localization_avg is not None:
            out.append(("localization_avg_pct", fmt(self.localization_avg)))
            for lab, v in self.localization_per_class.items():
                out.append((f"localization_{lab}_pct", fmt(v)))
        out.append(("counts", f"correct={self.n_correct} ref={self.n_ref} hyp={self.n_hyp} "
                              f"ins={self.n_insertions} del={self.n_deletions}"))
        return out

    def to_text(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        return "\n".join(f"{k:<{width}}  {v}" for k, v in self.rows())

    def to_delimited(self) -> str:
        return "\n".join(f"{k}\t{v}" for k, v in self.rows())


def run_leave_one_out(sessions: list, train_fn, test_fn) -> list:
    """Leave-one-session-out protocol.

    For each fold, `train_fn(train_sessions)` builds the models/priors
    bundle strictly from the training sessions, and
    `test_fn(bundle, held_out_session)` returns that session's per-event
    outcome records. Returns the per-fold outcome lists (callers pool
    them micro-averaged).
    """
    if len(sessions) < 2:
        raise ValueError("leave-one-out needs at least two sessions")
    outcomes = []
    for i, held_out in enumerate(sessions):
        train_sessions = [s for j, s in enumerate(sessions) if j != i]
        bundle = train_fn(train_sessions)
        outcomes.append(test_fn(bundle, held_out))
    return outcomes


# -- report files ----------------------------------------------------------------

def write_report(path, reports: list[MetricReport]) -> None:
    """Human-readable report: one block per condition."""
    with open(path, "w") as f:
        for rep in reports:
            f.write(rep.to_text())
            f.write("\n\n")


def write_report_delimited(path, reports: list[MetricReport]) -> None:
    with open(path, "w") as f:
        f.write("condition\tmetric\tvalue\n")
        for rep in reports:
            for key, val in rep.rows()[1:]:
                f.write(f"{rep.condition}\t{key}\t{val}\n")


def write_grid_values(path, values: np.ndarray, nx: int, ny: int) -> None:
    """Plot-data file: ny rows of nx space-separated values (row 0 first)."""
    values = np.asarray(values, dtype=float).reshape(ny, nx)
    with open(path, "w") as f:
        f.write(f"# grid {nx} x {ny}\n")
        for row in values:
            f.write(" ".join(f"{v:.6g}" for v in row) + "\n")
