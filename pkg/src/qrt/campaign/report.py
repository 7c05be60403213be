"""Campaign report model and its Json / Text renderings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any


class ReportFormat(str, Enum):
    JSON = "json"
    TEXT = "text"


@dataclass
class ScenarioReport:
    index: int
    kind: str
    name: str
    seed: int
    verdict: str
    iterations: list[dict[str, Any]]
    remediation_trail: list[dict[str, Any]] = field(default_factory=list)

    @property
    def final_findings(self) -> list[dict[str, Any]]:
        return self.iterations[-1]["findings"] if self.iterations else []


@dataclass
class CampaignReport:
    version: str
    config_digest: str
    master_seed: int
    seed_derivation: str
    scenarios: list[ScenarioReport]
    events: list[dict[str, Any]] = field(default_factory=list)
    wall_clock_seconds: float | None = None

    @property
    def overall_verdict(self) -> str:
        verdicts = [s.verdict for s in self.scenarios]
        if any(v == "VulnerableUnmitigated" for v in verdicts):
            return "VulnerableUnmitigated"
        if all(v == "Resilient" for v in verdicts):
            return "Resilient"
        return "Mitigated"

    def exit_code(self) -> int:
        return 2 if self.overall_verdict == "VulnerableUnmitigated" else 0

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        d = asdict(self)
        if not include_timing:
            d["wall_clock_seconds"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CampaignReport:
        scenarios = [ScenarioReport(**s) for s in d["scenarios"]]
        return cls(
            d["version"], d["config_digest"], d["master_seed"], d["seed_derivation"],
            scenarios, list(d.get("events", [])), d.get("wall_clock_seconds"),
        )


def render_json(report: CampaignReport, include_timing: bool = False) -> bytes:
    """Canonical Json: sorted keys, fixed separators, trailing newline.

    Wall-clock time is left out (null) unless asked for, so equal inputs
    give byte-identical output.
    """
    text = json.dumps(report.to_dict(include_timing), sort_keys=True, indent=2, allow_nan=False)
    return (text + "\n").encode()


def parse_report(data: bytes | str) -> CampaignReport:
    return CampaignReport.from_dict(json.loads(data))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict):
        return ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(value.items()))
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def render_text(report: CampaignReport) -> bytes:
    lines = [
        "QRT campaign report",
        f"version {report.version}  master_seed {report.master_seed}",
        f"config sha256 {report.config_digest}",
        f"seeds: {report.seed_derivation}",
    ]
    if report.wall_clock_seconds is not None:
        lines.append(f"wall clock {report.wall_clock_seconds:.2f} s")
    lines.append("")
    for s in report.scenarios:
        title = f"[{s.index}] {s.kind}" + (f" ({s.name})" if s.name else "")
        lines.append(f"{title}: {s.verdict}")
        for it in s.iterations:
            lines.append(f"  iteration {it['iteration']}")
            if not it["findings"]:
                lines.append("    findings: none")
            for f in it["findings"]:
                lines.append(f"    finding {f['kind']}: {f['detail']}")
                for e in f["evidence"][:5]:
                    lines.append(f"      - {e}")
                if len(f["evidence"]) > 5:
                    lines.append(f"      ... {len(f['evidence']) - 5} more")
            width = max((len(k) for k in it["metrics"]), default=0)
            for k in sorted(it["metrics"]):
                v = it["metrics"][k]
                if k == "retro_results":
                    v = f"{len(v)} payloads"
                lines.append(f"    {k.ljust(width)}  {_fmt(v)}")
            for fs in it["forensics"][:5]:
                lines.append(
                    f"    forensic {fs['session_id']}: eve_fraction={fs['eve_information_fraction']:.4f} "
                    f"attributed={fs['attributed_strategy']} compromised_rounds={fs['compromised_rounds']}"
                )
        if s.remediation_trail:
            lines.append("  remediation trail")
            for step in s.remediation_trail:
                if step["rule"] == "NoChange":
                    lines.append(f"    iteration {step['iteration']}: NoChange ({step['reason']})")
                else:
                    lines.append(
                        f"    iteration {step['iteration']}: {step['rule']} "
                        f"{step['field']} {step['before']} -> {step['after']}"
                    )
        lines.append("")
    lines.append(f"Overall: {report.overall_verdict}")
    return ("\n".join(lines) + "\n").encode()


def render_report(report: CampaignReport, fmt: ReportFormat | str = ReportFormat.JSON, include_timing: bool = False) -> bytes:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.JSON:
        return render_json(report, include_timing)
    return render_text(report)


def write_report(data: bytes, path: str | Path) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from None
