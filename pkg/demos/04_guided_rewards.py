"""Context-driven guidance: temporal modes, weight templates, and fallbacks.

Replays a scripted drought-then-flood event log through the guidance engine
and prints every directive it issues, then demonstrates the degradation
path when an external provider times out during an emergency.
"""

from hydroflock.guidance import (
    ContextEvent,
    GuidanceEngine,
    command_provider,
    render_directive,
    translate_context,
)

events = [
    ContextEvent(t=6, kind="drought", severity=0.5, duration=24, text="snowpack far below normal"),
    ContextEvent(t=40, kind="flood", severity=0.9, duration=8, text="atmospheric river inbound"),
]

print("=== directive sequence over a 56-step (hourly) scenario ===")
engine = GuidanceEngine()
last = None
for t in range(56):
    pending = [e for e in events if e.pending_at(t)]
    d = engine.update(t, pending)
    if d is not last and d is not None:
        a, s, c = d.weights.as_tuple()
        print(
            f"  t={t:>3} {d.mode:>11} ({a:.1f}, {s:.1f}, {c:.1f}) "
            f"gamma={d.gamma_human_hat:.2f} ttl={d.ttl_steps:>2} [{d.source_kind}]"
        )
        last = d

print()
print("=== the template table behind those choices ===")
for kind in ("drought", "storm_approaching", "flood", "contamination"):
    for mode in ("strategic", "tactical", "operational"):
        d = translate_context([ContextEvent(t=0, kind=kind, severity=0.8)], mode)
        print(f"  {kind:>17} / {mode:<11} -> {d.weights.as_tuple()}")

print()
print("=== provider wire format ===")
directive = translate_context([ContextEvent(t=0, kind="drought", severity=0.5)], "strategic")
print(" ", render_directive(directive))

print()
print("=== emergency fallback when the provider hangs ===")
slow = GuidanceEngine(provider=command_provider(["sleep", "30"], timeout_s=0.3))
d = slow.update(10, [ContextEvent(t=10, kind="flood", severity=0.95)])
print(f"  provider timed out; applied pre-computed weights {d.weights.as_tuple()}")
print(f"  fallbacks taken so far: {slow.fallback_count}")
