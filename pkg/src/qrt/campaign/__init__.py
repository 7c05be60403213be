"""Red-team campaign orchestration, remediation, forensics and reporting."""

from .config import (
    CampaignConfig,
    ConfigError,
    ScenarioKind,
    ScenarioSpec,
    config_from_dict,
    load_config,
)
from .forensics import (
    Attribution,
    FeatureBaseline,
    ForensicSummary,
    RetroOutcome,
    WrappedPayload,
    forensic_trace,
    retro_decrypt,
    wrap_payload,
)
from .remediation import Finding, FindingKind, NoChange, Posture, Remediation, remediate
from .report import (
    CampaignReport,
    ReportFormat,
    ScenarioReport,
    parse_report,
    render_report,
    write_report,
)
from .runner import run_campaign

__all__ = [
    "Attribution", "CampaignConfig", "CampaignReport", "ConfigError", "FeatureBaseline", "Finding",
    "FindingKind", "ForensicSummary", "NoChange", "Posture", "Remediation", "ReportFormat", "RetroOutcome",
    "ScenarioKind", "ScenarioReport", "ScenarioSpec", "WrappedPayload", "config_from_dict", "forensic_trace",
    "load_config", "parse_report", "remediate", "render_report", "retro_decrypt", "run_campaign",
    "wrap_payload", "write_report",
]
