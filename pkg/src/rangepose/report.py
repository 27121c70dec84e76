"""Batch evaluation over a corpus manifest and per-angle detection reports.

The text layout follows the classic per-angle tables: every axis gets three
lettered columns (angle, images, correct) and rows are aligned by position.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import PoseClass, RangePoseError
from .imageio import CorpusManifest, ManifestEntry, read_grid
from .landmarks import LandmarkSet
from .pipeline import Config, run_pipeline
from .pose import classify_pose

AXES = ("X", "Y", "Z", "YX", "FRONTAL")
ERROR = "ERROR"
PREDICTIONS = tuple(c.value for c in PoseClass) + (ERROR,)
CSV_HEADER = ("axis", "angle", "images", "correct")


class ReportFormatError(RangePoseError):
    pass


@dataclass(frozen=True)
class ReportRow:
    axis: str
    angle: str
    images: int
    correct: int

    def __post_init__(self):
        if not 0 <= self.correct <= self.images:
            raise ValueError(f"row {self.axis} {self.angle}: correct must lie in [0, images]")

    @property
    def rate(self) -> float:
        return self.correct / self.images if self.images else 0.0


def _angle_key(text: str) -> tuple:
    # +5 before -5, smaller magnitudes first; composites compare part by part
    key = []
    for part in text.split("/"):
        x = float(part)
        key += [abs(x), -x]
    return tuple(key)


def _row_key(row: ReportRow) -> tuple:
    axis = AXES.index(row.axis) if row.axis in AXES else len(AXES)
    return axis, row.axis, _angle_key(row.angle)


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple[ReportRow, ...] = ()
    # confusion[true][predicted] -> count; predicted may be ERROR
    confusion: dict = field(default_factory=dict)
    errors: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=_row_key)))
        object.__setattr__(self, "errors", tuple(sorted(self.errors)))

    @property
    def images(self) -> int:
        return sum(r.images for r in self.rows)

    @property
    def correct(self) -> int:
        return sum(r.correct for r in self.rows)

    @property
    def accuracy(self) -> float:
        return self.correct / self.images if self.images else 0.0

    def row(self, axis: str, angle: str) -> ReportRow:
        for r in self.rows:
            if r.axis == axis and r.angle == angle:
                return r
        raise KeyError((axis, angle))

    def to_dict(self) -> dict:
        return {
            "rows": [{"axis": r.axis, "angle": r.angle, "images": r.images, "correct": r.correct} for r in self.rows],
            "aggregate": {"images": self.images, "correct": self.correct, "accuracy": round(self.accuracy, 6)},
            "confusion": {t: dict(p) for t, p in sorted(self.confusion.items())},
            "errors": [{"path": p, "message": m} for p, m in self.errors],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        rows = [ReportRow(str(r["axis"]), str(r["angle"]), int(r["images"]), int(r["correct"])) for r in data.get("rows", [])]
        confusion = {t: {p: int(n) for p, n in preds.items()} for t, preds in data.get("confusion", {}).items()}
        errors = [(e["path"], e["message"]) for e in data.get("errors", [])]
        return cls(tuple(rows), confusion, tuple(errors))


@dataclass(frozen=True)
class ProbeOutcome:
    entry: ManifestEntry
    predicted: PoseClass | None
    error: str | None = None

    @property
    def correct(self) -> bool:
        return self.predicted is self.entry.label.pose


def tally(outcomes) -> EvaluationReport:
    """Fold probe outcomes into a report; the result ignores input order."""
    images, correct = Counter(), Counter()
    confusion: dict[str, Counter] = {}
    errors = []
    for o in outcomes:
        lab = o.entry.label
        key = (lab.axis, lab.angle_text)
        images[key] += 1
        correct[key] += o.correct
        pred = o.predicted.value if o.predicted is not None else ERROR
        confusion.setdefault(lab.pose.value, Counter())[pred] += 1
        if o.error:
            errors.append((o.entry.path, o.error))
    rows = [ReportRow(a, ang, images[(a, ang)], correct[(a, ang)]) for a, ang in images]
    conf = {t: {p: c[p] for p in PREDICTIONS if c[p]} for t, c in confusion.items()}
    return EvaluationReport(tuple(rows), conf, tuple(errors))


def _landmarks_job(job: tuple[str, str]) -> LandmarkSet | str:
    path, cfg_text = job
    try:
        return run_pipeline(read_grid(path), Config.loads(cfg_text))
    except (RangePoseError, OSError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _reference(manifest: CorpusManifest, probe: ManifestEntry) -> tuple[ManifestEntry, ManifestEntry | None]:
    frontal = manifest.frontal_ref(probe.subject_id)
    y_ref = manifest.y_ref(probe.subject_id, probe.label.yaw) if probe.label.yaw else None
    return frontal, y_ref


def run_probes(
    manifest: CorpusManifest,
    config: Config | None = None,
    base_dir=".",
    workers: int | None = None,
) -> list[ProbeOutcome]:
    """Classify every probe against its subject's references, in manifest order.

    Each referenced file is processed once; a file that fails to load or
    yields no landmarks turns every probe depending on it into an ERROR
    prediction with a note, and the batch carries on.
    """
    config = config or Config()
    workers = workers or config.eval.workers
    base = Path(base_dir)
    probes = manifest.probes()
    needed = []
    for p in probes:
        frontal, y_ref = _reference(manifest, p)
        needed += [frontal.path, p.path] + ([y_ref.path] if y_ref else [])
    paths = list(dict.fromkeys(needed))
    jobs = [(str(base / p), config.dumps()) for p in paths]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_landmarks_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_landmarks_job(j) for j in jobs]
    found = dict(zip(paths, results))

    conv, th = config.pose.convention, config.pose.thresholds
    outcomes = []
    for p in probes:
        frontal, y_ref = _reference(manifest, p)
        deps = [frontal.path, p.path] + ([y_ref.path] if y_ref else [])
        failed = [found[d] if d == p.path else f"{d}: {found[d]}" for d in deps if isinstance(found[d], str)]
        if failed:
            outcomes.append(ProbeOutcome(p, None, "; ".join(failed)))
            continue
        pred = classify_pose(found[frontal.path], found[p.path], found[y_ref.path] if y_ref else None, conv, th)
        outcomes.append(ProbeOutcome(p, pred))
    return outcomes


def evaluate(
    manifest: CorpusManifest,
    config: Config | None = None,
    base_dir=".",
    workers: int | None = None,
) -> EvaluationReport:
    return tally(run_probes(manifest, config, base_dir, workers))


# ---------------------------------------------------------------- emitters


def _letters(n: int) -> list[str]:
    out = []
    for i in range(n):
        s, k = "", i
        while True:
            s = chr(ord("A") + k % 26) + s
            k = k // 26 - 1
            if k < 0:
                break
        out.append(s)
    return out


def _axis_groups(report: EvaluationReport) -> dict[str, list[ReportRow]]:
    groups: dict[str, list[ReportRow]] = {}
    for r in report.rows:
        groups.setdefault(r.axis, []).append(r)
    return groups


def _fmt_table(lines: list[list[str]]) -> list[str]:
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    return ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip() for row in lines]


def _emit_text(report: EvaluationReport) -> str:
    out = ["Detection of pose alignment per nominal angle"]
    groups = _axis_groups(report)
    axes = list(groups)
    letters = _letters(3 * len(axes))
    if axes:
        out.append("columns:")
        for i, axis in enumerate(axes):
            for j, what in enumerate(("angle", "images", "correct")):
                out.append(f"  {letters[3 * i + j]} = {axis} {what}")
    table = [["Sl.no"] + letters]
    for k in range(max((len(g) for g in groups.values()), default=0)):
        line = [str(k + 1)]
        for axis in axes:
            g = groups[axis]
            line += [g[k].angle, str(g[k].images), str(g[k].correct)] if k < len(g) else ["-", "-", "-"]
        table.append(line)
    out += _fmt_table(table)
    if report.rows:
        out.append(f"aggregate: {report.correct}/{report.images} correct ({100 * report.accuracy:.2f}%)")
    truths = [t for t in PREDICTIONS if t in report.confusion]
    if truths:
        out.append("confusion (rows true, columns predicted):")
        conf = [["true\\pred", *PREDICTIONS]]
        for t in truths:
            conf.append([t] + [str(report.confusion[t].get(p, 0)) for p in PREDICTIONS])
        out += _fmt_table(conf)
    for path, msg in report.errors:
        out.append(f"error {path}: {msg}")
    return "\n".join(out) + "\n"


def _emit_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow([r.axis, r.angle, r.images, r.correct])
    return buf.getvalue()


def emit_report(report: EvaluationReport, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "csv":
        return _emit_csv(report).encode()
    if fmt == "text":
        return _emit_text(report).encode()
    raise ValueError(f"unknown report format {fmt!r}; choose text, csv or json")


# ----------------------------------------------------------------- parsers


def _parse_text(text: str) -> EvaluationReport:
    lines = text.splitlines()
    columns: dict[str, tuple[str, str]] = {}
    rows, errors = [], []
    confusion: dict[str, dict[str, int]] = {}
    header: list[str] | None = None
    pred_cols: list[str] | None = None
    for line in lines[1:]:
        s = line.strip()
        if not s:
            continue
        if s.startswith("error "):
            body = s[len("error "):]
            path, sep, msg = body.partition(": ")
            if not sep:
                path, msg = body.removesuffix(":"), ""
            errors.append((path, msg))
        elif "=" in s and header is None and s != "columns:":
            letter, _, what = s.partition(" = ")
            axis, _, kind = what.rpartition(" ")
            columns[letter] = (axis, kind)
        elif s.startswith("Sl.no"):
            header = s.split()[1:]
        elif s.startswith("true\\pred"):
            pred_cols = s.split()[1:]
        elif s.startswith(("aggregate:", "confusion", "columns:")):
            continue
        elif pred_cols is not None:
            t, *counts = s.split()
            confusion[t] = {p: int(n) for p, n in zip(pred_cols, counts) if int(n)}
        elif header is not None:
            cells = s.split()[1:]
            if len(cells) != len(header):
                raise ReportFormatError(f"table row has {len(cells)} cells, header has {len(header)}")
            per_axis: dict[str, dict[str, str]] = {}
            for letter, cell in zip(header, cells):
                axis, kind = columns[letter]
                per_axis.setdefault(axis, {})[kind] = cell
            for axis, d in per_axis.items():
                if d["angle"] != "-":
                    rows.append(ReportRow(axis, d["angle"], int(d["images"]), int(d["correct"])))
        else:
            raise ReportFormatError(f"unexpected line in text report: {line!r}")
    return EvaluationReport(tuple(rows), confusion, tuple(errors))


def parse_report(data: bytes | str, fmt: str) -> EvaluationReport:
    """Inverse of :func:`emit_report` (csv carries the per-angle rows only)."""
    text = data.decode() if isinstance(data, (bytes, bytearray)) else data
    try:
        if fmt == "json":
            return EvaluationReport.from_dict(json.loads(text))
        if fmt == "csv":
            reader = csv.reader(io.StringIO(text))
            head = next(reader, None)
            if head is None or tuple(head) != CSV_HEADER:
                raise ReportFormatError(f"csv header must be {','.join(CSV_HEADER)}")
            return EvaluationReport(tuple(ReportRow(a, ang, int(n), int(c)) for a, ang, n, c in reader))
        if fmt == "text":
            return _parse_text(text)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ReportFormatError(f"cannot parse {fmt} report: {exc}") from exc
    raise ValueError(f"unknown report format {fmt!r}; choose text, csv or json")
