"""Aggregation of per-session scores and report rendering.

Aggregates are recomputed from raw components (summed seconds, summed edit
counts) rather than averaging per-session rates, so a condition's number
equals what a single scorer run over the pooled material would produce.
Rendering emits JSON, a delimited CSV, and bar-chart figures.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

from .metrics import CpWerResult, DERBreakdown, MeetingSdr

CONDITIONS = ("0L", "0S", "OV10", "OV20", "OV30", "OV40")
FIGURE_DPI = 150
PNG_METADATA = {"Software": "meetpipe"}


@dataclass
class SessionScore:
    """Everything scored for one session, or the failure that stopped it."""

    session: str
    condition: str
    failed: bool = False
    error: str | None = None
    der: DERBreakdown | None = None
    cpwer: CpWerResult | None = None
    sdr: MeetingSdr | None = None
    overlap: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"session": self.session, "condition": self.condition}
        if self.failed:
            out["failed"] = True
            out["error"] = self.error
            return out
        out["failed"] = False
        if self.der is not None:
            out["der"] = {
                "missed": self.der.missed,
                "false_alarm": self.der.false_alarm,
                "confusion": self.der.confusion,
                "total_speech": self.der.total_speech,
                "der": self.der.der,
            }
        if self.cpwer is not None:
            out["cpwer"] = {
                "cpwer": self.cpwer.cpwer,
                "total_edits": self.cpwer.total_edits,
                "total_reference_words": self.cpwer.total_reference_words,
                "speaker_mapping": self.cpwer.speaker_mapping,
            }
        if self.sdr is not None:
            out["si_sdr"] = {
                "per_speaker": self.sdr.per_speaker,
                "mean": self.sdr.mean,
                "missing": self.sdr.missing,
            }
        if self.overlap is not None:
            out["overlap_ratio"] = self.overlap
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SessionScore":
        score = cls(data["session"], data["condition"], failed=data.get("failed", False))
        if score.failed:
            score.error = data.get("error")
            return score
        if "der" in data:
            d = data["der"]
            score.der = DERBreakdown(
                d["missed"], d["false_alarm"], d["confusion"], d["total_speech"], d["der"]
            )
        if "cpwer" in data:
            c = data["cpwer"]
            score.cpwer = CpWerResult(
                c["cpwer"],
                c["total_edits"],
                c["total_reference_words"],
                dict(c["speaker_mapping"]),
            )
        if "si_sdr" in data:
            s = data["si_sdr"]
            score.sdr = MeetingSdr(dict(s["per_speaker"]), s["mean"], list(s["missing"]))
        score.overlap = data.get("overlap_ratio")
        return score


def _aggregate_rows(scores: list[SessionScore]) -> dict[str, dict]:
    """One row per condition plus ALL; weights follow the raw components."""
    groups: dict[str, list[SessionScore]] = {}
    for score in scores:
        if score.failed:
            continue
        groups.setdefault(score.condition, []).append(score)

    rows: dict[str, dict] = {}
    order = [c for c in CONDITIONS if c in groups] + sorted(
        set(groups) - set(CONDITIONS)
    )
    for condition in order + ["ALL"]:
        members = groups.get(condition, []) if condition != "ALL" else [
            s for group in groups.values() for s in group
        ]
        if not members:
            continue
        row: dict = {"sessions": len(members)}
        dered = [s.der for s in members if s.der is not None]
        if dered:
            total = sum(d.total_speech for d in dered)
            missed = sum(d.missed for d in dered)
            fa = sum(d.false_alarm for d in dered)
            conf = sum(d.confusion for d in dered)
            row.update(
                missed=missed / total,
                false_alarm=fa / total,
                confusion=conf / total,
                der=(missed + fa + conf) / total,
            )
        cps = [s.cpwer for s in members if s.cpwer is not None]
        if cps:
            words = sum(c.total_reference_words for c in cps)
            edits = sum(c.total_edits for c in cps)
            row["cpwer"] = edits / words if words else 0.0
        sdr_values = [
            v
            for s in members
            if s.sdr is not None
            for v in s.sdr.per_speaker.values()
        ]
        if sdr_values:
            row["mean_si_sdr"] = sum(sdr_values) / len(sdr_values)
        rows[condition] = row
    return rows


@dataclass
class PipelineReport:
    """Per-session scores plus condition/overall aggregates and timing."""

    sessions: list[SessionScore]
    conditions: dict[str, dict] = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(
        cls, scores: list[SessionScore], timing: dict[str, float] | None = None
    ) -> "PipelineReport":
        rows = _aggregate_rows(scores)
        overall = rows.pop("ALL", {})
        return cls(scores, rows, overall, dict(timing or {}))

    @property
    def num_failed(self) -> int:
        return sum(1 for s in self.sessions if s.failed)

    def to_json(self) -> str:
        payload = {
            "sessions": [s.to_dict() for s in self.sessions],
            "conditions": self.conditions,
            "overall": self.overall,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Delimited per-condition table; the ALL row comes last."""
        columns = [
            "condition",
            "sessions",
            "der",
            "missed",
            "false_alarm",
            "confusion",
            "cpwer",
            "mean_si_sdr",
        ]
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for condition, row in list(self.conditions.items()) + [("ALL", self.overall)]:
            if not row:
                continue
            writer.writerow(
                [condition, row.get("sessions", 0)]
                + [
                    f"{row[c]:.6f}" if c in row else ""
                    for c in columns[2:]
                ]
            )
        return buffer.getvalue()


def _bar_figure(path, rows: dict[str, dict], keys: list[str], title: str, ylabel: str):
    conditions = [c for c, row in rows.items() if any(k in row for k in keys)]
    if not conditions:
        return False
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    bottom = [0.0] * len(conditions)
    for key in keys:
        values = [rows[c].get(key, 0.0) for c in conditions]
        ax.bar(conditions, values, bottom=bottom if len(keys) > 1 else None, label=key)
        if len(keys) > 1:
            bottom = [b + v for b, v in zip(bottom, values)]
    if len(keys) > 1:
        ax.legend(fontsize=8)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return True


def render_figures(report: PipelineReport, figures_dir) -> list[str]:
    """Bar charts per condition; returns the file names written."""
    rows = dict(report.conditions)
    written = []
    if _bar_figure(
        figures_dir / "der_breakdown.png",
        rows,
        ["missed", "false_alarm", "confusion"],
        "Diarization error by condition",
        "fraction of speech",
    ):
        written.append("der_breakdown.png")
    if _bar_figure(
        figures_dir / "cpwer.png", rows, ["cpwer"], "cpWER by condition", "cpWER"
    ):
        written.append("cpwer.png")
    if _bar_figure(
        figures_dir / "si_sdr.png",
        rows,
        ["mean_si_sdr"],
        "Mean SI-SDR by condition",
        "dB",
    ):
        written.append("si_sdr.png")
    return written
