"""Context-driven reward shaping: temporal modes, directive templates, rewards.

A *directive* packages coordination weights, an estimated human efficiency
loss, and a rationale, valid for a mode-dependent window. Directives come
from a deterministic rulebook (the default) or an external provider speaking
the documented JSON wire format:

    {"weights": {"align": f, "sep": f, "coh": f},
     "gamma_human": f,
     "rationale": s}

Provider failures are never fatal: an emergency request falls back to a
still-valid cached emergency directive and then to the pre-computed
emergency weight table; a routine request falls back to the cached directive
and then to the rulebook.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import urllib.request
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .coordination import CoordinationWeights
from .errors import DirectiveError

log = logging.getLogger(__name__)

MODES = ("strategic", "tactical", "operational")
MODE_MULTIPLIER = {"strategic": 1.0, "tactical": 2.0, "operational": 4.0}
MODE_CYCLE_HOURS = {"strategic": 24.0, "tactical": 4.0, "operational": 10.0 / 60.0}
EMERGENCY_SEVERITY = 0.7
WEIGHT_SUM_TOL = 0.05

EVENT_KINDS = (
    "drought",
    "flood",
    "storm_approaching",
    "contamination",
    "winter_storm",
    "heatwave",
    "maintenance",
    "regulatory",
    "none",
)


@dataclass(frozen=True)
class ContextEvent:
    t: int
    kind: str
    severity: float
    duration: int = 1
    region: str = "default"
    text: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise DirectiveError(f"unknown event kind {self.kind!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise DirectiveError(f"severity must be in [0,1], got {self.severity}")
        if self.duration < 1:
            raise DirectiveError("duration must be at least 1 step")

    def pending_at(self, clock: int) -> bool:
        return self.t <= clock < self.t + self.duration


@dataclass(frozen=True)
class GuidanceDirective:
    weights: CoordinationWeights
    gamma_human_hat: float
    rationale: str
    mode: str
    issued_at: int
    ttl_steps: int
    source_kind: str = "none"  # event kind that triggered this directive

    def __post_init__(self):
        if self.mode not in MODES:
            raise DirectiveError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.gamma_human_hat <= 1.0:
            raise DirectiveError("gamma_human_hat must be in [0,1]")

    def active_at(self, clock: int) -> bool:
        return self.issued_at <= clock < self.issued_at + self.ttl_steps


# (align, sep, coh, gamma_hat) per event kind and mode. Simplex sums are
# validated at import time; unlisted combinations are a load-time error.
DEFAULT_RULEBOOK: dict[str, dict[str, tuple[float, float, float, float]]] = {
    "none": {
        "strategic": (0.6, 0.1, 0.3, 0.0),
        "tactical": (0.6, 0.1, 0.3, 0.0),
        "operational": (0.6, 0.1, 0.3, 0.0),
    },
    "drought": {
        "strategic": (0.6, 0.1, 0.3, 0.15),
        "tactical": (0.7, 0.1, 0.2, 0.15),
        "operational": (0.8, 0.1, 0.1, 0.15),
    },
    "flood": {
        "strategic": (0.4, 0.4, 0.2, 0.05),
        "tactical": (0.4, 0.4, 0.2, 0.05),
        "operational": (0.1, 0.8, 0.1, 0.05),
    },
    "storm_approaching": {
        "strategic": (0.4, 0.3, 0.3, 0.05),
        "tactical": (0.2, 0.6, 0.2, 0.05),
        "operational": (0.1, 0.8, 0.1, 0.05),
    },
    "contamination": {
        "strategic": (0.3, 0.5, 0.2, 0.1),
        "tactical": (0.2, 0.6, 0.2, 0.1),
        "operational": (0.2, 0.7, 0.1, 0.1),
    },
    "winter_storm": {
        "strategic": (0.5, 0.2, 0.3, 0.1),
        "tactical": (0.3, 0.5, 0.2, 0.1),
        "operational": (0.1, 0.8, 0.1, 0.1),
    },
    "heatwave": {
        "strategic": (0.6, 0.1, 0.3, 0.1),
        "tactical": (0.6, 0.2, 0.2, 0.1),
        "operational": (0.8, 0.1, 0.1, 0.1),
    },
    "maintenance": {
        "strategic": (0.5, 0.3, 0.2, 0.2),
        "tactical": (0.4, 0.4, 0.2, 0.2),
        "operational": (0.2, 0.7, 0.1, 0.2),
    },
    "regulatory": {
        "strategic": (0.6, 0.1, 0.3, 0.1),
        "tactical": (0.5, 0.2, 0.3, 0.1),
        "operational": (0.5, 0.3, 0.2, 0.1),
    },
}

# Immediate responses applied when an emergency request cannot be served.
EMERGENCY_WEIGHTS: dict[str, tuple[float, float, float]] = {
    "flood": (0.1, 0.8, 0.1),
    "drought": (0.8, 0.1, 0.1),
    "contamination": (0.2, 0.7, 0.1),
}
GENERIC_EMERGENCY = (0.1, 0.8, 0.1)

DEFAULT_TRIPLE = (0.6, 0.1, 0.3)


def validate_rulebook(rulebook: Mapping[str, Mapping[str, tuple]]) -> None:
    """Reject incomplete or off-simplex rulebooks at load time."""
    for kind in EVENT_KINDS:
        if kind not in rulebook:
            raise DirectiveError(f"rulebook missing event kind {kind!r}")
        for mode in MODES:
            if mode not in rulebook[kind]:
                raise DirectiveError(f"rulebook missing mode {mode!r} for kind {kind!r}")
            a, s, c, g = rulebook[kind][mode]
            CoordinationWeights(a, s, c)  # raises off simplex
            if not 0.0 <= g <= 1.0:
                raise DirectiveError(f"rulebook gamma for {kind}/{mode} outside [0,1]")


validate_rulebook(DEFAULT_RULEBOOK)


def ttl_steps_for(mode: str, dt_s: float) -> int:
    return max(1, round(MODE_CYCLE_HOURS[mode] * 3600.0 / dt_s))


def select_mode(
    clock: int,
    pending_events: Sequence[ContextEvent],
    dt_s: float = 3600.0,
    emergency_threshold: float = EMERGENCY_SEVERITY,
) -> str | None:
    """Pick the temporal mode to (re)issue at this step, or None to hold.

    Emergencies (any pending event at or above the severity threshold) force
    operational mode immediately. Otherwise tactical fires on 4-hour
    boundaries while any event is active, and strategic on 24-hour
    boundaries. Between triggers the current directive is retained.
    """
    if any(e.severity >= emergency_threshold for e in pending_events):
        return "operational"
    steps_4h = max(1, round(4 * 3600.0 / dt_s))
    steps_24h = max(1, round(24 * 3600.0 / dt_s))
    if pending_events and clock % steps_4h == 0:
        return "tactical"
    if clock % steps_24h == 0:
        return "strategic"
    return None


def translate_context(
    events: Sequence[ContextEvent],
    mode: str,
    rulebook: Mapping[str, Mapping[str, tuple]] | None = None,
    clock: int = 0,
    dt_s: float = 3600.0,
) -> GuidanceDirective:
    """Deterministic (event, mode) -> directive mapping through the rulebook.

    With several overlapping events the highest severity wins (ties keep the
    earlier one in the list). No events maps to the ``none`` row.
    """
    book = DEFAULT_RULEBOOK if rulebook is None else rulebook
    if mode not in MODES:
        raise DirectiveError(f"unknown mode {mode!r}")
    if events:
        event = max(events, key=lambda e: e.severity)
        kind, text = event.kind, event.text
    else:
        kind, text = "none", ""
    a, s, c, g = book[kind][mode]
    rationale = f"{mode} response to {kind}" + (f": {text}" if text else "")
    return GuidanceDirective(
        weights=CoordinationWeights(a, s, c),
        gamma_human_hat=g,
        rationale=rationale,
        mode=mode,
        issued_at=clock,
        ttl_steps=ttl_steps_for(mode, dt_s),
        source_kind=kind,
    )


def render_directive(directive: GuidanceDirective) -> str:
    """Serialize to the provider wire format."""
    return json.dumps(
        {
            "weights": {
                "align": directive.weights.k_align,
                "sep": directive.weights.k_sep,
                "coh": directive.weights.k_coh,
            },
            "gamma_human": directive.gamma_human_hat,
            "rationale": directive.rationale,
        }
    )


def parse_directive(
    raw: str,
    mode: str = "strategic",
    clock: int = 0,
    dt_s: float = 3600.0,
    source_kind: str = "none",
) -> GuidanceDirective:
    """Parse and validate provider output.

    Weight triples whose sum is within 0.05 of one are renormalized onto the
    simplex; larger deviations are rejected. gamma_human is clamped to [0,1]
    with a warning.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise DirectiveError(f"malformed directive document: {exc}") from exc
    if not isinstance(doc, dict):
        raise DirectiveError("directive document must be a JSON object")
    for key in ("weights", "gamma_human", "rationale"):
        if key not in doc:
            raise DirectiveError(f"directive missing field {key!r}")
    w = doc["weights"]
    for key in ("align", "sep", "coh"):
        if key not in w:
            raise DirectiveError(f"directive weights missing {key!r}")
    triple = [float(w["align"]), float(w["sep"]), float(w["coh"])]
    total = sum(triple)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise DirectiveError(f"weights off simplex: sum {total}")
    triple = [v / total for v in triple]
    gamma = float(doc["gamma_human"])
    if not 0.0 <= gamma <= 1.0:
        warnings.warn(f"gamma_human {gamma} clamped to [0,1]", stacklevel=2)
        gamma = min(1.0, max(0.0, gamma))
    return GuidanceDirective(
        weights=CoordinationWeights(*triple),
        gamma_human_hat=gamma,
        rationale=str(doc["rationale"]),
        mode=mode,
        issued_at=clock,
        ttl_steps=ttl_steps_for(mode, dt_s),
        source_kind=source_kind,
    )


def update_efficiency_estimate(
    alpha_nominal: float,
    gamma_env: float,
    directive: GuidanceDirective | None,
    epsilon_floor: float = 0.1,
) -> float:
    """Refined channel-efficiency estimate using the directive's human-loss term."""
    gamma_hat = directive.gamma_human_hat if directive is not None else 0.0
    return float(
        min(1.0, max(epsilon_floor, alpha_nominal * (1.0 - gamma_env - gamma_hat)))
    )


@dataclass(frozen=True)
class RewardConfig:
    flood_penalty_scale: float = 1.0  # multiplies the node's flood weight
    supply_cap: float = 1.0
    eco_cap: float = 1.0
    op_cost_weight: float = 1.0
    shaping_gains: Mapping[str, float] = field(
        default_factory=lambda: {"strategic": 0.5, "tactical": 1.0, "operational": 2.0}
    )
    drawdown_margin_m: float = 1.0  # full flood-preparedness credit this far below h_safe

    def __post_init__(self):
        if self.flood_penalty_scale < 0 or self.op_cost_weight < 0:
            raise ValueError("reward scales must be nonnegative")


CONSERVE_KINDS = frozenset({"drought", "heatwave"})
DRAWDOWN_KINDS = frozenset({"flood", "storm_approaching", "winter_storm"})


def shaping_score(kind: str, h: float, h_safe: float, q_out: float, a_max: float, margin: float) -> float:
    """Event-alignment score in [0,1]: conserve under dry events, draw down under wet."""
    if kind in CONSERVE_KINDS:
        return 1.0 - min(1.0, q_out / a_max)
    if kind in DRAWDOWN_KINDS:
        return min(1.0, max(0.0, (h_safe - h) / margin))
    return 0.0


def compute_reward(
    node,
    state,
    actions: Mapping[str, float],
    demand: float,
    f_eco_share: float,
    directive: GuidanceDirective | None,
    config: RewardConfig = RewardConfig(),
) -> float:
    """Per-node instantaneous reward: safety + supply + ecology + shaped term.

    Safety is a hard indicator penalty above the safe level; supply and
    ecology are capped delivery ratios (zero demand counts as satisfied).
    The shaped term carries the operating cost baseline and, under an active
    directive, a mode-gained event-alignment bonus.
    """
    q_out = float(sum(actions.values()))
    h = state.h
    r_safety = -config.flood_penalty_scale * node.flood_weight if h > node.h_safe else 0.0
    r_supply = config.supply_cap if demand <= 0 else min(config.supply_cap, q_out / demand)
    r_eco = config.eco_cap if f_eco_share <= 0 else min(config.eco_cap, q_out / f_eco_share)
    shaped = -config.op_cost_weight * node.op_cost * q_out
    if directive is not None:
        gain = config.shaping_gains.get(directive.mode, 0.0)
        shaped += gain * shaping_score(
            directive.source_kind, h, node.h_safe, q_out, node.a_max, config.drawdown_margin_m
        )
    return r_safety + r_supply + r_eco + shaped


# -- providers ----------------------------------------------------------------

Provider = Callable[[dict], str]


def builtin_provider(rulebook: Mapping | None = None, dt_s: float = 3600.0) -> Provider:
    """Default provider: the rulebook serialized through the wire format."""
    book = DEFAULT_RULEBOOK if rulebook is None else rulebook

    def call(request: dict) -> str:
        events = [ContextEvent(**e) for e in request.get("events", [])]
        return render_directive(
            translate_context(events, request["mode"], book, request.get("clock", 0), dt_s)
        )

    return call


def command_provider(argv: Sequence[str], timeout_s: float = 2.0) -> Provider:
    def call(request: dict) -> str:
        proc = subprocess.run(
            list(argv),
            input=json.dumps(request),
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
        if proc.returncode != 0:
            raise DirectiveError(f"provider exited {proc.returncode}: {proc.stderr.strip()}")
        return proc.stdout

    return call


def http_provider(url: str, timeout_s: float = 2.0) -> Provider:
    def call(request: dict) -> str:
        req = urllib.request.Request(
            url,
            data=json.dumps(request).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req, timeout=timeout_s) as resp:
            return resp.read().decode("utf-8")

    return call


def provider_from_spec(spec: str | None, timeout_s: float = 2.0, dt_s: float = 3600.0) -> Provider:
    """Build a provider from a single config value.

    ``None`` or ``"builtin"`` selects the rulebook; ``http(s)://...`` an HTTP
    endpoint; ``cmd:<command line>`` a subprocess.
    """
    if spec is None or spec == "builtin":
        return builtin_provider(dt_s=dt_s)
    if spec.startswith(("http://", "https://")):
        return http_provider(spec, timeout_s)
    if spec.startswith("cmd:"):
        return command_provider(shlex.split(spec[4:]), timeout_s)
    raise DirectiveError(f"unrecognized provider spec {spec!r}")


class GuidanceEngine:
    """Single-writer directive state machine used by simulation and training.

    ``update`` is called once per step; readers consume the immutable
    directive it returns. External provider calls are guarded by the
    timeout/fallback contract described in the module docstring.
    """

    def __init__(
        self,
        rulebook: Mapping | None = None,
        provider: Provider | None = None,
        dt_s: float = 3600.0,
        emergency_threshold: float = EMERGENCY_SEVERITY,
        enabled: bool = True,
    ):
        self.rulebook = DEFAULT_RULEBOOK if rulebook is None else rulebook
        validate_rulebook(self.rulebook)
        self.provider = provider
        self.dt_s = dt_s
        self.emergency_threshold = emergency_threshold
        self.enabled = enabled
        self.current: GuidanceDirective | None = None
        self.fallback_count = 0

    def active(self, clock: int) -> GuidanceDirective | None:
        if self.current is not None and self.current.active_at(clock):
            return self.current
        return None

    def update(self, clock: int, pending_events: Sequence[ContextEvent]) -> GuidanceDirective | None:
        if not self.enabled:
            return None
        mode = select_mode(clock, pending_events, self.dt_s, self.emergency_threshold)
        if mode is None:
            return self.active(clock)
        kind = max(pending_events, key=lambda e: e.severity).kind if pending_events else "none"
        directive = self._request(mode, kind, clock, pending_events)
        self.current = directive
        return directive

    def _request(
        self, mode: str, kind: str, clock: int, events: Sequence[ContextEvent]
    ) -> GuidanceDirective:
        if self.provider is None:
            return translate_context(events, mode, self.rulebook, clock, self.dt_s)
        request = {
            "clock": clock,
            "mode": mode,
            "events": [
                {
                    "t": e.t,
                    "kind": e.kind,
                    "severity": e.severity,
                    "duration": e.duration,
                    "region": e.region,
                    "text": e.text,
                }
                for e in events
            ],
            "summary": f"{mode} request, dominant event {kind}",
        }
        try:
            raw = self.provider(request)
            return parse_directive(raw, mode, clock, self.dt_s, source_kind=kind)
        except Exception as exc:  # noqa: BLE001 - any provider failure degrades, never aborts
            self.fallback_count += 1
            log.warning("guidance provider failed (%s); falling back", exc)
            return self._fallback(mode, kind, clock, events)

    def _fallback(
        self, mode: str, kind: str, clock: int, events: Sequence[ContextEvent]
    ) -> GuidanceDirective:
        cached = self.current
        if mode == "operational":
            # Emergencies only trust a still-valid emergency directive.
            if cached is not None and cached.mode == "operational" and cached.active_at(clock):
                return cached
            triple = EMERGENCY_WEIGHTS.get(kind, GENERIC_EMERGENCY)
            return GuidanceDirective(
                weights=CoordinationWeights(*triple),
                gamma_human_hat=0.0,
                rationale=f"pre-computed emergency response to {kind}",
                mode=mode,
                issued_at=clock,
                ttl_steps=ttl_steps_for(mode, self.dt_s),
                source_kind=kind,
            )
        if cached is not None and cached.active_at(clock):
            return cached
        return translate_context(events, mode, self.rulebook, clock, self.dt_s)
