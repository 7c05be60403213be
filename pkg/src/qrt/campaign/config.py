"""Campaign configuration: YAML schema, validation and digest.

Example::

    master_seed: 7
    max_remediation_iters: 3
    baseline_sessions: 128
    scenarios:
      - kind: QuantumExploit
        repetitions: 20
        session: {n_rounds: 50000}
        channel: {transmittance: 0.3, detector_efficiency: 0.8}
        strategy: {kind: pns, block_prob: compensating}

Unknown keys at any level are errors.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .. import adversary as adv
from ..bb84.session import SessionConfig, channel_from_dict, session_config_from_dict
from ..fuzzer import Bug
from ..qubit_core import ChannelParams, InvalidParameter
from ..sidechannel import LeakModel
from ..state_anchor import Scheme


class ConfigError(ValueError):
    pass


class ScenarioKind(str, Enum):
    TRADITIONAL_PLAYBOOK = "TraditionalPlaybook"
    AI_RED_TEAM = "AiRedTeam"
    QUANTUM_EXPLOIT = "QuantumExploit"
    CRYPTO_ASSESSMENT = "CryptoAssessment"
    ADVERSARIAL_ML = "AdversarialMl"
    PROTOCOL_FUZZ = "ProtocolFuzz"
    SIDE_CHANNEL = "SideChannel"
    ANOMALY_MONITOR = "AnomalyMonitor"
    RETRO_DECRYPT = "RetroDecrypt"


SESSION_KINDS = frozenset({
    ScenarioKind.TRADITIONAL_PLAYBOOK, ScenarioKind.AI_RED_TEAM, ScenarioKind.QUANTUM_EXPLOIT,
    ScenarioKind.CRYPTO_ASSESSMENT, ScenarioKind.ADVERSARIAL_ML, ScenarioKind.ANOMALY_MONITOR,
    ScenarioKind.RETRO_DECRYPT,
})

_COMMON = {"kind", "name", "repetitions", "seed"}
_SESSION = {"session", "channel", "detector"}
_ALLOWED = {
    ScenarioKind.TRADITIONAL_PLAYBOOK: _SESSION | {"playbook"},
    ScenarioKind.AI_RED_TEAM: _SESSION | {"arms", "epsilon", "reward_weights"},
    ScenarioKind.QUANTUM_EXPLOIT: _SESSION | {"strategy"},
    ScenarioKind.CRYPTO_ASSESSMENT: _SESSION | {"alpha", "state_proof"},
    ScenarioKind.ADVERSARIAL_ML: _SESSION | {"strategy", "budget", "evade_iters"},
    ScenarioKind.PROTOCOL_FUZZ: {"fuzz"},
    ScenarioKind.SIDE_CHANNEL: {"leak", "key_bits"},
    ScenarioKind.ANOMALY_MONITOR: _SESSION | {"strategy"},
    ScenarioKind.RETRO_DECRYPT: _SESSION | {"wrappers", "quantum"},
}
_DETECTOR_KEYS = {"kind", "fpr"}
_FUZZ_KEYS = {"bugs", "step_budget", "context_rounds", "depolarize_prob"}
_PROOF_KEYS = {"stakes", "schemes", "tau", "controlled", "quantum"}

DEFAULT_PLAYBOOK = (
    {"kind": "intercept_resend", "fraction": 1.0},
    {"kind": "intercept_resend", "fraction": 0.25},
    {"kind": "pns", "block_prob": "compensating"},
    {"kind": "fault_inject", "fault": "detector_blind", "rate": 0.5},
)


def _mapping(value: Any, where: str) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return dict(value)


def _reject_unknown(d: dict[str, Any], allowed: set[str], where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def check_strategy(d: Any, where: str) -> dict[str, Any]:
    """Validate a strategy mapping.  ``block_prob: compensating`` is kept symbolic."""
    d = _mapping(d, where)
    probe = dict(d)
    if probe.get("block_prob") == "compensating":
        probe["block_prob"] = 0.5
    try:
        strategy = adv.strategy_from_dict(probe)
    except (InvalidParameter, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if isinstance(strategy, adv.Adaptive):
        raise ConfigError(f"{where}: adaptive strategies are configured through AiRedTeam arms")
    return d


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    parameters: dict[str, Any]
    repetitions: int
    seed: int | None = None
    name: str = ""

    @property
    def session_config(self) -> SessionConfig:
        return session_config_from_dict(self.parameters.get("session", {}))

    @property
    def channel(self) -> ChannelParams:
        return channel_from_dict(self.parameters.get("channel", {}))

    @property
    def detector(self) -> dict[str, Any]:
        d = {"kind": "forest", "fpr": 0.05}
        d.update(self.parameters.get("detector", {}))
        return d

    @property
    def leak_model(self) -> LeakModel:
        return LeakModel(**self.parameters.get("leak", {}))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "repetitions": self.repetitions}
        if self.name:
            out["name"] = self.name
        if self.seed is not None:
            out["seed"] = self.seed
        out.update(self.parameters)
        return out


@dataclass(frozen=True)
class CampaignConfig:
    scenarios: tuple[ScenarioSpec, ...]
    master_seed: int = 0
    max_remediation_iters: int = 3
    baseline_sessions: int = 128
    output_path: str | None = None

    def with_seed(self, seed: int) -> CampaignConfig:
        return CampaignConfig(self.scenarios, seed, self.max_remediation_iters, self.baseline_sessions, self.output_path)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "master_seed": self.master_seed,
            "max_remediation_iters": self.max_remediation_iters,
            "baseline_sessions": self.baseline_sessions,
            "scenarios": [s.to_dict() for s in self.scenarios],
        }
        if self.output_path is not None:
            out["output_path"] = self.output_path
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; ``output_path`` is excluded."""
        d = self.to_dict()
        d.pop("output_path", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _positive_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ConfigError(f"{where} must be a positive integer")
    return value


def _seed(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ConfigError(f"{where} must be an integer in [0, 2**64)")
    return value


def _scenario(raw: Any, index: int) -> ScenarioSpec:
    where = f"scenarios[{index}]"
    d = _mapping(raw, where)
    try:
        kind = ScenarioKind(d.get("kind"))
    except ValueError:
        raise ConfigError(f"{where}: unknown scenario kind {d.get('kind')!r}") from None
    _reject_unknown(d, _COMMON | _ALLOWED[kind], where)
    reps = _positive_int(d.get("repetitions", 1), f"{where}.repetitions")
    seed = _seed(d["seed"], f"{where}.seed") if "seed" in d else None
    params = {k: v for k, v in d.items() if k not in _COMMON}

    try:
        if kind in SESSION_KINDS:
            session_config_from_dict(_mapping(params.get("session"), f"{where}.session"))
            channel_from_dict(_mapping(params.get("channel"), f"{where}.channel"))
            det = _mapping(params.get("detector"), f"{where}.detector")
            _reject_unknown(det, _DETECTOR_KEYS, f"{where}.detector")
            if det.get("kind", "forest") not in ("forest", "pca"):
                raise ConfigError(f"{where}.detector.kind must be forest or pca")
            if not 0 < float(det.get("fpr", 0.05)) < 1:
                raise ConfigError(f"{where}.detector.fpr must be in (0, 1)")
    except (InvalidParameter, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None

    if "strategy" in params:
        params["strategy"] = check_strategy(params["strategy"], f"{where}.strategy")
    if kind is ScenarioKind.TRADITIONAL_PLAYBOOK:
        playbook = params.get("playbook", list(DEFAULT_PLAYBOOK))
        if not isinstance(playbook, list) or not playbook:
            raise ConfigError(f"{where}.playbook must be a non-empty list")
        params["playbook"] = [check_strategy(s, f"{where}.playbook[{i}]") for i, s in enumerate(playbook)]
    if kind is ScenarioKind.AI_RED_TEAM:
        arms = params.get("arms")
        if not isinstance(arms, list) or not arms:
            raise ConfigError(f"{where}.arms must be a non-empty list")
        params["arms"] = [check_strategy(s, f"{where}.arms[{i}]") for i, s in enumerate(arms)]
        eps = params.get("epsilon", 0.1)
        if not 0 <= float(eps) <= 1:
            raise ConfigError(f"{where}.epsilon must be in [0, 1]")
        rw = params.get("reward_weights", [1.0, 1.0])
        if not isinstance(rw, list) or len(rw) != 2:
            raise ConfigError(f"{where}.reward_weights must be a list of two numbers")
    if kind is ScenarioKind.CRYPTO_ASSESSMENT:
        if not 0 < float(params.get("alpha", 0.01)) < 1:
            raise ConfigError(f"{where}.alpha must be in (0, 1)")
        if "state_proof" in params:
            _check_proof(_mapping(params["state_proof"], f"{where}.state_proof"), f"{where}.state_proof")
    if kind is ScenarioKind.ADVERSARIAL_ML:
        budget = params.get("budget")
        values = budget if isinstance(budget, list) else [budget]
        if isinstance(budget, list) and len(budget) != 8:
            raise ConfigError(f"{where}.budget must be a number, null, or 8 numbers")
        if any(v is not None and not (isinstance(v, (int, float)) and v >= 0) for v in values):
            raise ConfigError(f"{where}.budget entries must be non-negative")
        _positive_int(params.get("evade_iters", 50), f"{where}.evade_iters")
    if kind is ScenarioKind.PROTOCOL_FUZZ:
        fz = _mapping(params.get("fuzz"), f"{where}.fuzz")
        _reject_unknown(fz, _FUZZ_KEYS, f"{where}.fuzz")
        for b in fz.get("bugs", []):
            try:
                Bug(b)
            except ValueError:
                raise ConfigError(f"{where}.fuzz.bugs: unknown bug {b!r}") from None
        _positive_int(fz.get("step_budget", 10**6), f"{where}.fuzz.step_budget")
        _positive_int(fz.get("context_rounds", 1024), f"{where}.fuzz.context_rounds")
        params["fuzz"] = fz
    if kind is ScenarioKind.SIDE_CHANNEL:
        leak = _mapping(params.get("leak"), f"{where}.leak")
        _reject_unknown(leak, {"leak_weight", "noise_sigma", "samples_per_bit"}, f"{where}.leak")
        try:
            LeakModel(**leak)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.leak: {exc}") from None
        _positive_int(params.get("key_bits", 128), f"{where}.key_bits")
        if reps < 2:
            raise ConfigError(f"{where}.repetitions (trace count) must be at least 2")
    if kind is ScenarioKind.RETRO_DECRYPT:
        wrappers = params.get("wrappers", ["Classical", "PostQuantum"])
        if not isinstance(wrappers, list) or not wrappers:
            raise ConfigError(f"{where}.wrappers must be a non-empty list")
        for w in wrappers:
            try:
                Scheme(w)
            except ValueError:
                raise ConfigError(f"{where}.wrappers: unknown scheme {w!r}") from None
    return ScenarioSpec(kind, params, reps, seed, str(d.get("name", "")))


def _check_proof(d: dict[str, Any], where: str) -> None:
    _reject_unknown(d, _PROOF_KEYS, where)
    stakes = d.get("stakes", [1, 1, 1, 1])
    if not isinstance(stakes, list) or not stakes or any(not isinstance(s, (int, float)) or s <= 0 for s in stakes):
        raise ConfigError(f"{where}.stakes must be a list of positive numbers")
    schemes = d.get("schemes", "PostQuantum")
    for s in schemes if isinstance(schemes, list) else [schemes]:
        try:
            Scheme(s)
        except ValueError:
            raise ConfigError(f"{where}.schemes: unknown scheme {s!r}") from None
    if isinstance(schemes, list) and len(schemes) != len(stakes):
        raise ConfigError(f"{where}.schemes must match stakes in length")
    tau = float(d.get("tau", 0.75))
    if not 0.5 < tau <= 1:
        raise ConfigError(f"{where}.tau must be in (0.5, 1]")
    controlled = d.get("controlled", [])
    if any(not isinstance(c, int) or not 0 <= c < len(stakes) for c in controlled):
        raise ConfigError(f"{where}.controlled must list validator indices")


_TOP = {"scenarios", "master_seed", "max_remediation_iters", "baseline_sessions", "output_path"}
MIN_BASELINE_SESSIONS = 86


def config_from_dict(raw: Any) -> CampaignConfig:
    d = _mapping(raw, "config")
    _reject_unknown(d, _TOP, "config")
    scenarios = d.get("scenarios")
    if not isinstance(scenarios, list) or not scenarios:
        raise ConfigError("scenarios must be a non-empty list")
    iters = d.get("max_remediation_iters", 3)
    if isinstance(iters, bool) or not isinstance(iters, int) or iters < 0:
        raise ConfigError("max_remediation_iters must be a non-negative integer")
    baseline = _positive_int(d.get("baseline_sessions", 128), "baseline_sessions")
    if baseline < MIN_BASELINE_SESSIONS:
        # 3/4 train the detector (at least 64) and 1/4 calibrate its threshold
        raise ConfigError(f"baseline_sessions must be at least {MIN_BASELINE_SESSIONS}")
    out = d.get("output_path")
    return CampaignConfig(
        tuple(_scenario(s, i) for i, s in enumerate(scenarios)),
        _seed(d.get("master_seed", 0), "master_seed"),
        iters,
        baseline,
        None if out is None else str(out),
    )


def load_config(path: str | Path) -> CampaignConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


def resolve_strategy(d: dict[str, Any], session: SessionConfig, channel: ChannelParams) -> adv.AdversaryStrategy:
    d = dict(d)
    if d.get("block_prob") == "compensating":
        d["block_prob"] = adv.compensating_block_prob(session.mu_signal, channel)
    return adv.strategy_from_dict(d)


def budget_vector(budget: Any) -> list[float]:
    if isinstance(budget, list):
        return [math.inf if b is None else float(b) for b in budget]
    return [math.inf if budget is None else float(budget)] * 8
