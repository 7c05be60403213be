"""Seven-stage campaign pipeline.

Per scenario and remediation iteration: (1) threat model, (2) environment,
(3) detector training on fresh benign sessions, (4) red teaming, (5)
anomaly scoring, (6) forensics, (7) remediation.  Stages 3-6 repeat after
each remediation step with the updated posture.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .. import __version__, anomaly
from .. import adversary as adv
from .. import fuzzer as fz
from .. import sidechannel as sc
from .. import state_anchor as sa
from ..bb84.randomness import test_key_randomness
from ..bb84.session import (
    SessionConfig,
    Telemetry,
    Transcript,
    eve_known_fraction,
    run_session,
)
from ..qubit_core import IntensityClass
from ..rng import make_rng, split
from .config import (
    CampaignConfig,
    ScenarioKind,
    ScenarioSpec,
    budget_vector,
    resolve_strategy,
)
from .forensics import (
    FeatureBaseline,
    ForensicSummary,
    forensic_trace,
    retro_decrypt,
    wrap_payload,
)
from .remediation import Finding, FindingKind, NoChange, Posture, remediate
from .report import CampaignReport, ScenarioReport

SEED_DERIVATION = (
    "repetition seed = split(master_seed, scenario_index, repetition_index), or "
    "split(scenario.seed, repetition_index) when the scenario sets its own seed; "
    "split = SplitMix64 chain"
)


@dataclass
class EventLog:
    events: list[dict[str, Any]] = field(default_factory=list)

    def add(self, scenario: int, iteration: int, stage: int, action: str, detail: str = "") -> None:
        self.events.append({
            "seq": len(self.events), "scenario": scenario, "iteration": iteration,
            "stage": stage, "action": action, "detail": detail,
        })


@dataclass
class SessionRecord:
    session_id: str
    seed: int
    label: str
    strategy: adv.AdversaryStrategy | None
    transcript: Transcript
    telemetry: Telemetry
    score: float = 0.0
    flagged: bool = False
    forensic: ForensicSummary | None = None

    @property
    def aborted(self) -> bool:
        return self.transcript.abort_reason is not None

    @property
    def keyed(self) -> bool:
        return self.transcript.alice_final_key is not None

    @property
    def ref(self) -> str:
        return f"session:{self.session_id} seed:{self.seed}"


@dataclass
class Detector:
    model: anomaly.DetectorModel
    threshold: float
    baseline: FeatureBaseline
    held_out_alerts: int
    held_out: int


@dataclass
class IterationResult:
    findings: list[Finding]
    metrics: dict[str, Any]
    forensics: list[ForensicSummary] = field(default_factory=list)


@dataclass
class _Scenario:
    config: CampaignConfig
    index: int
    spec: ScenarioSpec
    log: EventLog
    telemetry_sink: list[Telemetry] | None

    @property
    def base_seed(self) -> int:
        return self.spec.seed if self.spec.seed is not None else self.config.master_seed

    def rep_seed(self, r: int) -> int:
        if self.spec.seed is not None:
            return split(self.spec.seed, r)
        return split(self.config.master_seed, self.index, r)

    def aux_seed(self, *path: int | str) -> int:
        return split(self.base_seed, self.index, "aux", *path)

    def event(self, iteration: int, stage: int, action: str, detail: str = "") -> None:
        self.log.add(self.index, iteration, stage, action, detail)

    def session(self, it: int, r: int, cfg: SessionConfig, strategy, label: str, tag: str = "r") -> SessionRecord:
        seed = self.rep_seed(r) if tag == "r" else self.aux_seed(tag, r)
        sid = f"sc{self.index}-it{it}-{tag}{r}"
        transcript, telemetry = run_session(cfg, self.spec.channel, strategy, seed=seed, session_id=sid)
        if self.telemetry_sink is not None:
            self.telemetry_sink.append(telemetry)
        return SessionRecord(sid, seed, label, strategy, transcript, telemetry)


def _f(x: float) -> float:
    return float(x) if math.isfinite(float(x)) else 0.0


def _mu(cfg: SessionConfig) -> dict[IntensityClass, float]:
    return {c: cfg.mu_of(c) for c in IntensityClass}


# -- shared session stages ---------------------------------------------------


def _train(s: _Scenario, it: int, cfg: SessionConfig) -> Detector:
    n = s.config.baseline_sessions
    records = [s.session(it, j, cfg, None, "benign", tag="b") for j in range(n)]
    vectors = [anomaly.FeatureVector.from_telemetry(r.telemetry) for r in records]
    n_hold = n // 4
    det = s.spec.detector
    model = anomaly.fit(vectors[n_hold:], det["kind"], make_rng(s.aux_seed("detector", it)))
    threshold = anomaly.calibrate_threshold(model, vectors[:n_hold], float(det["fpr"]))
    alerts = int(np.count_nonzero(anomaly.score_many(model, vectors[:n_hold]) >= threshold))
    s.event(it, 3, "fit-detector", f"{det['kind']} {anomaly.model_digest(model)[:16]} on {n - n_hold} benign sessions")
    return Detector(model, threshold, FeatureBaseline.from_vectors(vectors[n_hold:]), alerts, n_hold)


def _score_and_trace(s: _Scenario, it: int, det: Detector, records: list[SessionRecord], cfg: SessionConfig) -> None:
    if records:
        vectors = [anomaly.FeatureVector.from_telemetry(r.telemetry) for r in records]
        scores = anomaly.score_many(det.model, vectors)
        for r, score in zip(records, scores):
            r.score = float(score)
            r.flagged = bool(score >= det.threshold)
    s.event(it, 5, "score", f"{sum(r.flagged for r in records)}/{len(records)} flagged")
    for r in records:
        r.forensic = forensic_trace(r.transcript, r.transcript.eve, r.telemetry, det.baseline, _mu(cfg))
    s.event(it, 6, "forensics", f"{len(records)} sessions traced")


def _session_metrics(det: Detector, records: list[SessionRecord]) -> dict[str, Any]:
    aborts: dict[str, int] = {}
    for r in records:
        key = r.transcript.abort_reason.value if r.aborted else "none"
        aborts[key] = aborts.get(key, 0) + 1
    qbers = [r.telemetry.qber_estimate for r in records if r.telemetry.qber_estimate is not None]
    open_eve = [r.forensic.eve_information_fraction for r in records if r.keyed and r.forensic]
    return {
        "sessions": len(records),
        "abort_reasons": dict(sorted(aborts.items())),
        "mean_qber": _f(np.mean(qbers)) if qbers else 0.0,
        "detection_rate": _f(np.mean([r.flagged for r in records])) if records else 0.0,
        "detector_digest": anomaly.model_digest(det.model),
        "alert_threshold": _f(det.threshold),
        "held_out_false_alerts": det.held_out_alerts,
        "held_out_sessions": det.held_out,
        "final_key_bits": int(sum(len(r.transcript.alice_final_key) for r in records if r.keyed)),
        "mean_eve_fraction_unaborted": _f(np.mean(open_eve)) if open_eve else 0.0,
    }


def _exposure_findings(records: list[SessionRecord]) -> list[Finding]:
    """Sessions that produced a key Eve partly knows, and key integrity failures."""
    out: list[Finding] = []
    exposed_pns = [r for r in records if r.keyed and r.forensic.eve_information_fraction > 0
                   and isinstance(r.strategy, adv.PhotonNumberSplit)]
    exposed = [r for r in records if r.keyed and r.forensic.eve_information_fraction > 0
               and not isinstance(r.strategy, adv.PhotonNumberSplit)]
    if exposed_pns:
        out.append(Finding(
            FindingKind.PNS_UNDETECTED,
            f"{len(exposed_pns)} PNS sessions produced keys without abort",
            [r.ref for r in exposed_pns],
            {"mean_eve_fraction": _f(np.mean([r.forensic.eve_information_fraction for r in exposed_pns]))},
        ))
    if exposed:
        out.append(Finding(
            FindingKind.UNDETECTED_EAVESDROPPING,
            f"{len(exposed)} attacked sessions stayed under the QBER abort threshold",
            [r.ref for r in exposed],
            {
                "mean_eve_fraction": _f(np.mean([r.forensic.eve_information_fraction for r in exposed])),
                "max_qber": _f(max(r.telemetry.qber_estimate or 0.0 for r in exposed)),
            },
        ))
    broken = [r for r in records if r.keyed and not np.array_equal(r.transcript.alice_final_key, r.transcript.bob_final_key)]
    if broken:
        out.append(Finding(FindingKind.KEY_MISMATCH, f"{len(broken)} sessions ended with unequal keys", [r.ref for r in broken]))
    return out


def _reported_forensics(records: list[SessionRecord], findings: list[Finding]) -> list[ForensicSummary]:
    cited = {e for f in findings for e in f.evidence}
    return [r.forensic for r in records if r.forensic and (r.flagged or r.ref in cited)]


# -- executors ---------------------------------------------------------------


def _attack_iteration(s: _Scenario, posture: Posture, it: int, plan: list[tuple[str, dict[str, Any]]]) -> IterationResult:
    cfg = posture.session
    det = _train(s, it, cfg)
    records = []
    for r in range(s.spec.repetitions):
        for k, (label, sdict) in enumerate(plan):
            strategy = resolve_strategy(sdict, cfg, s.spec.channel)
            records.append(s.session(it, r * len(plan) + k, cfg, strategy, label))
    s.event(it, 4, "red-team", f"{len(records)} adversarial sessions")
    _score_and_trace(s, it, det, records, cfg)
    findings = _exposure_findings(records)
    metrics = _session_metrics(det, records)
    by_label: dict[str, dict[str, float]] = {}
    for label, _ in plan:
        mine = [r for r in records if r.label == label]
        by_label[label] = {
            "abort_rate": _f(np.mean([r.aborted for r in mine])),
            "detection_rate": _f(np.mean([r.flagged for r in mine])),
            "mean_qber": _f(np.mean([r.telemetry.qber_estimate or 0.0 for r in mine])),
        }
    metrics["per_strategy"] = by_label
    return IterationResult(findings, metrics, _reported_forensics(records, findings))


def _label(d: dict[str, Any]) -> str:
    return ",".join(f"{k}={d[k]}" for k in sorted(d))


def run_playbook(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    plan = [(_label(d), d) for d in s.spec.parameters["playbook"]]
    return _attack_iteration(s, posture, it, plan)


def run_quantum_exploit(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    d = s.spec.parameters.get("strategy", {"kind": "pns", "block_prob": "compensating"})
    return _attack_iteration(s, posture, it, [(_label(d), d)])


def run_ai_red_team(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    cfg = posture.session
    p = s.spec.parameters
    arms = tuple(resolve_strategy(a, cfg, s.spec.channel) for a in p["arms"])
    state = adv.BanditState(adv.Adaptive(arms, float(p.get("epsilon", 0.1)), tuple(p.get("reward_weights", [1.0, 1.0]))))
    det = _train(s, it, cfg)
    s.event(it, 3, "init-bandit", f"{len(arms)} arms, epsilon {state.strategy.epsilon}")
    rng = make_rng(s.aux_seed("bandit", it))
    records = []
    for r in range(s.spec.repetitions):
        arm = state.choose(rng)
        rec = s.session(it, r, cfg, arms[arm], f"arm{arm}")
        state.record(arm, eve_known_fraction(rec.transcript), rec.aborted)
        records.append(rec)
    s.event(it, 4, "red-team", f"{len(records)} bandit-driven sessions")
    _score_and_trace(s, it, det, records, cfg)
    findings = _exposure_findings(records)
    metrics = _session_metrics(det, records)
    pulls = [0] * len(arms)
    totals = [0.0] * len(arms)
    for arm, reward in state.history:
        pulls[arm] += 1
        totals[arm] += reward
    metrics["arm_pulls"] = pulls
    metrics["arm_mean_reward"] = [_f(t / n) if n else 0.0 for t, n in zip(totals, pulls)]
    metrics["dominant_arm"] = int(np.argmax(pulls))
    return IterationResult(findings, metrics, _reported_forensics(records, findings))


def run_crypto_assessment(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    cfg = posture.session
    p = s.spec.parameters
    alpha = float(p.get("alpha", 0.01))
    det = _train(s, it, cfg)
    records = [s.session(it, r, cfg, None, "honest") for r in range(s.spec.repetitions)]
    s.event(it, 4, "assess", f"{len(records)} honest sessions")
    _score_and_trace(s, it, det, records, cfg)
    findings = _exposure_findings(records)
    metrics = _session_metrics(det, records)

    tested = failed = 0
    for r in records:
        if r.keyed and len(r.transcript.alice_final_key) >= 100:
            tested += 1
            failed += not test_key_randomness(r.transcript.alice_final_key, alpha).passed
    p_fail = 1 - (1 - alpha) ** 2
    limit = tested * p_fail + 3 * math.sqrt(tested * p_fail * (1 - p_fail))
    metrics["randomness_tested"] = tested
    metrics["randomness_failed"] = failed
    leaks = [r.transcript.leaked_bits for r in records if r.keyed]
    metrics["mean_leaked_bits"] = _f(np.mean(leaks)) if leaks else 0.0
    accounted = all(
        len(r.transcript.alice_final_key) <= len(r.transcript.key_indices) - r.transcript.leaked_bits
        for r in records if r.keyed
    )
    metrics["leakage_accounted"] = accounted
    if tested and failed > limit:
        findings.append(Finding(FindingKind.WEAK_RANDOMNESS, f"{failed}/{tested} final keys failed randomness tests",
                                [r.ref for r in records if r.keyed]))

    if "state_proof" in p:
        q = p["state_proof"]
        tau = float(q.get("tau", sa.DEFAULT_TAU))
        vs = sa.ValidatorSet.build(q.get("stakes", [1, 1, 1, 1]), q.get("schemes", "PostQuantum"), s.aux_seed("validators"))
        epoch = it
        honest = sa.honest_proof(vs, [v.id for v in vs], epoch, sa.state_digest(b"honest-state"), tau)
        power = sa.AdversaryPower(frozenset(q.get("controlled", [])), bool(q.get("quantum", True)))
        forged = sa.forge_attempt(power, vs, epoch, sa.state_digest(b"forged-state"), tau)
        honest_ok = isinstance(honest, sa.StateProof) and isinstance(sa.verify_proof(honest, vs, tau), sa.Accept)
        metrics["state_proof"] = {
            "honest_accepted": honest_ok,
            "honest_proof_bytes": honest.size_bytes if isinstance(honest, sa.StateProof) else 0,
            "verification_signature_checks": len(vs),
            "forgery": "Accepted" if isinstance(forged, sa.StateProof) else f"Infeasible:{forged.reason.value}",
            "adversary_stake": _f(vs.stake_of(power.controlled)),
        }
        if isinstance(forged, sa.StateProof):
            findings.append(Finding(FindingKind.STATE_PROOF_FORGERY,
                                    f"forged state proof accepted at tau={tau}",
                                    [f"validators seed:{s.aux_seed('validators')} epoch:{epoch}"],
                                    {"forged_stake": _f(forged.attested_stake)}))
    return IterationResult(findings, metrics, _reported_forensics(records, findings))


def run_adversarial_ml(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    cfg = posture.session
    p = s.spec.parameters
    d = p.get("strategy", {"kind": "intercept_resend", "fraction": 1.0})
    strategy = resolve_strategy(d, cfg, s.spec.channel)
    det = _train(s, it, cfg)
    records = [s.session(it, r, cfg, strategy, _label(d)) for r in range(s.spec.repetitions)]
    s.event(it, 4, "red-team", f"{len(records)} adversarial sessions")
    _score_and_trace(s, it, det, records, cfg)
    before = [r.transcript.abort_reason for r in records]
    budget = budget_vector(p.get("budget"))
    iters = int(p.get("evade_iters", 50))
    evaded = []
    for k, r in enumerate(records):
        res = anomaly.evade(det.model, anomaly.FeatureVector.from_telemetry(r.telemetry), budget, iters,
                            make_rng(s.aux_seed("evade", it, k)))
        evaded.append(res)
    s.event(it, 4, "evade", f"{len(evaded)} feature vectors perturbed")
    after = [r.transcript.abort_reason for r in records]
    success = [e.score < det.threshold for e in evaded]
    findings = _exposure_findings(records)
    metrics = _session_metrics(det, records)
    metrics["evasion_success_rate"] = _f(np.mean(success)) if success else 0.0
    metrics["mean_score_before"] = _f(np.mean([e.initial_score for e in evaded])) if evaded else 0.0
    metrics["mean_score_after"] = _f(np.mean([e.score for e in evaded])) if evaded else 0.0
    metrics["abort_reasons_unchanged"] = before == after
    if any(success):
        findings.append(Finding(
            FindingKind.DETECTOR_EVASION,
            f"{sum(success)}/{len(success)} attack vectors pushed below the alert threshold",
            [r.ref for r, ok in zip(records, success) if ok],
            {"aborts_still_raised": sum(1 for r, ok in zip(records, success) if ok and r.aborted)},
        ))
    return IterationResult(findings, metrics, _reported_forensics(records, findings))


def run_anomaly_monitor(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    cfg = posture.session
    d = s.spec.parameters.get("strategy", {"kind": "intercept_resend", "fraction": 1.0})
    strategy = resolve_strategy(d, cfg, s.spec.channel)
    det = _train(s, it, cfg)
    records = [s.session(it, r, cfg, strategy, _label(d)) for r in range(s.spec.repetitions)]
    s.event(it, 4, "red-team", f"{len(records)} monitored sessions")
    _score_and_trace(s, it, det, records, cfg)
    missed = [r for r in records if r.keyed and not r.flagged and r.forensic.eve_information_fraction > 0]
    findings = []
    if missed:
        findings.append(Finding(FindingKind.ANOMALY_MISSED,
                                f"{len(missed)} compromised sessions neither aborted nor alerted",
                                [r.ref for r in missed]))
    return IterationResult(findings, _session_metrics(det, records), _reported_forensics(records, findings))


def run_retro_decrypt(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    cfg = posture.session
    p = s.spec.parameters
    wrappers = [sa.Scheme(w) for w in p.get("wrappers", ["Classical", "PostQuantum"])]
    det = _train(s, it, cfg)
    records = [s.session(it, r, cfg, None, "honest") for r in range(s.spec.repetitions)]
    s.event(it, 4, "harvest", f"{len(records)} sessions recorded by the adversary")
    _score_and_trace(s, it, det, records, cfg)
    stored = []
    for r, rec in enumerate(records):
        if rec.keyed:
            scheme = wrappers[r % len(wrappers)]
            stored.append(wrap_payload(f"p{r}", rec.session_id, rec.transcript.alice_final_key,
                                       f"payload of {rec.session_id}".encode(), scheme, r))
    results = retro_decrypt(stored, sa.AdversaryPower(quantum=bool(p.get("quantum", True))))
    compromised = [x for x in results if x.outcome.value == "Compromised"]
    metrics = _session_metrics(det, records)
    metrics["payloads_stored"] = len(results)
    metrics["payloads_compromised"] = len(compromised)
    metrics["retro_results"] = [x.to_dict() for x in results]
    findings = _exposure_findings(records)
    if compromised:
        findings.append(Finding(
            FindingKind.HARVEST_DECRYPT,
            f"{len(compromised)} Classical-wrapped payloads decrypted after harvest",
            [f"payload:{x.payload_id} session:{x.session_id} harvest_epoch:{x.harvest_epoch}" for x in compromised],
        ))
    return IterationResult(findings, metrics, _reported_forensics(records, findings))


def run_protocol_fuzz(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    q = s.spec.parameters.get("fuzz", {})
    bugs = {fz.Bug(b) for b in q.get("bugs", [])}
    if posture.strict_digest:
        bugs.discard(fz.Bug.DIGEST_LENGTH_UNCHECKED)
    target = fz.ReconciliationTarget(frozenset(bugs))
    base = s.aux_seed("fuzz") & 0xFFFFFFFF
    ctx = fz.build_context(base, int(q.get("context_rounds", 1024)), float(q.get("depolarize_prob", 0.06)))
    budget = int(q.get("step_budget", fz.DEFAULT_STEP_BUDGET))
    s.event(it, 2, "fuzz-context", f"{len(ctx.dialogue)} honest messages, bugs={sorted(b.value for b in bugs)}")
    results = fz.fuzz_post_processing(target, s.spec.repetitions, s.aux_seed("fuzz-cases"), budget, ctx)
    s.event(it, 4, "fuzz", f"{len(results)} cases")
    counts: dict[str, int] = {}
    for _, v in results:
        counts[v.label()] = counts.get(v.label(), 0) + 1
    findings = []
    metrics: dict[str, Any] = {"cases": len(results), "verdicts": dict(sorted(counts.items()))}
    minimized = {}
    by_class: dict[str, list[fz.FuzzCase]] = {}
    for case, v in results:
        if v.is_failure:
            by_class.setdefault(v.label(), []).append(case)
    for label, cases in sorted(by_class.items()):
        small = fz.minimize(cases[0], target, ctx, budget)
        minimized[label] = {"case_id": small.case_id, "mutations": len(small.mutations),
                            "original_mutations": len(cases[0].mutations)}
        kind = FindingKind.FUZZ_KEY_MISMATCH if label == "KeyMismatchUndetected" else FindingKind.FUZZ_VIOLATION
        findings.append(Finding(kind, f"{len(cases)} cases ended in {label}",
                                [f"case:{c.case_id} seed:{c.seed}" for c in cases[:20]],
                                {"cases": len(cases)}))
    s.event(it, 6, "minimize", f"{len(minimized)} failure classes minimized")
    metrics["minimized"] = minimized
    return IterationResult(findings, metrics)


def run_side_channel(s: _Scenario, posture: Posture, it: int) -> IterationResult:
    model = s.spec.leak_model
    if posture.leak_mitigated:
        model = model.mitigated()
    bits = int(s.spec.parameters.get("key_bits", 128))
    seed = s.aux_seed("traces")
    key = make_rng(seed, "key").integers(0, 2, bits)
    traces = sc.emit_traces(key, model, s.spec.repetitions, seed)
    s.event(it, 4, "collect-traces", f"{len(traces)} traces, snr={_f(model.snr)}")
    recovered, confidence = sc.dpa_recover(traces, model.samples_per_bit)
    acc = sc.recovery_accuracy(key, recovered)
    s.event(it, 6, "dpa", f"accuracy {acc:.4f}")
    chance_limit = 0.5 + 3 * 0.5 / math.sqrt(bits)
    metrics = {"traces": len(traces), "recovery_accuracy": acc, "mean_confidence": _f(confidence.mean()),
               "leak_weight": model.leak_weight, "chance_limit": chance_limit}
    findings = []
    if acc > chance_limit:
        findings.append(Finding(FindingKind.SIDE_CHANNEL_LEAK, f"DPA recovered {acc:.3f} of key bits",
                                [f"traces seed:{seed} count:{len(traces)}"], {"accuracy": acc}))
    return IterationResult(findings, metrics)


EXECUTORS: dict[ScenarioKind, Callable[[_Scenario, Posture, int], IterationResult]] = {
    ScenarioKind.TRADITIONAL_PLAYBOOK: run_playbook,
    ScenarioKind.AI_RED_TEAM: run_ai_red_team,
    ScenarioKind.QUANTUM_EXPLOIT: run_quantum_exploit,
    ScenarioKind.CRYPTO_ASSESSMENT: run_crypto_assessment,
    ScenarioKind.ADVERSARIAL_ML: run_adversarial_ml,
    ScenarioKind.PROTOCOL_FUZZ: run_protocol_fuzz,
    ScenarioKind.SIDE_CHANNEL: run_side_channel,
    ScenarioKind.ANOMALY_MONITOR: run_anomaly_monitor,
    ScenarioKind.RETRO_DECRYPT: run_retro_decrypt,
}


def _posture_dict(p: Posture) -> dict[str, Any]:
    return {"session": p.session.to_dict(), "strict_digest": p.strict_digest, "leak_mitigated": p.leak_mitigated}


def _run_scenario(s: _Scenario) -> ScenarioReport:
    spec = s.spec
    posture = Posture(session=spec.session_config)
    s.event(0, 1, "threat-model", spec.kind.value)
    s.event(0, 2, "environment", "channel and session configured")
    executor = EXECUTORS[spec.kind]
    iterations: list[dict[str, Any]] = []
    trail: list[dict[str, Any]] = []
    it = 0
    while True:
        result = executor(s, posture, it)
        iterations.append({
            "iteration": it,
            "posture": _posture_dict(posture),
            "findings": [f.to_dict() for f in result.findings],
            "metrics": result.metrics,
            "forensics": [f.to_dict() for f in result.forensics],
        })
        if not result.findings:
            verdict = "Resilient" if it == 0 else f"MitigatedAfter{it}"
            break
        if it >= s.config.max_remediation_iters:
            verdict = "VulnerableUnmitigated"
            break
        step = remediate(result.findings, posture)
        if isinstance(step, NoChange):
            s.event(it, 7, "remediate", f"NoChange: {step.reason}")
            trail.append({"iteration": it + 1, "rule": "NoChange", "reason": step.reason})
            verdict = "VulnerableUnmitigated"
            break
        s.event(it, 7, "remediate", f"{step.rule}: {step.field} {step.before} -> {step.after}")
        trail.append({"iteration": it + 1, "rule": step.rule, "field": step.field,
                      "before": step.before, "after": step.after})
        posture = step.posture
        it += 1
    return ScenarioReport(
        index=s.index, kind=spec.kind.value, name=spec.name,
        seed=s.base_seed,
        verdict=verdict, iterations=iterations, remediation_trail=trail,
    )


def run_campaign(
    config: CampaignConfig,
    telemetry_sink: list[Telemetry] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> CampaignReport:
    log = EventLog()
    start = clock()
    scenarios = [
        _run_scenario(_Scenario(config, i, spec, log, telemetry_sink))
        for i, spec in enumerate(config.scenarios)
    ]
    return CampaignReport(
        version=__version__,
        config_digest=config.digest(),
        master_seed=config.master_seed,
        seed_derivation=SEED_DERIVATION,
        scenarios=scenarios,
        events=log.events,
        wall_clock_seconds=clock() - start,
    )
