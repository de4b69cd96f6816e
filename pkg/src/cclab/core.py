"""Shared domain types: link, flows, scenarios, and unit conversions.

All quantities carry explicit units in their field names (``_bps``, ``_s``,
``_bytes``).  Buffer sizes are configured as a multiple of the link's
bandwidth-delay product and converted to whole packets here, since a droptail
router admits whole packets.
"""

import math
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Union

DEFAULT_MTU_BYTES = 1500
# Socket-buffer analog: large enough that bulk flows are never
# receiver-window-limited, even at 64 BDP buffers.
DEFAULT_MAX_WINDOW_BYTES = 64 * 1024 * 1024
MIN_MTU_BYTES = 576


class CcaKind(Enum):
    """Congestion control algorithm of a sender."""

    RENO = "reno"
    CUBIC = "cubic"
    BBR_V1 = "bbrv1"
    BBR_V2 = "bbrv2"
    BBR_V3 = "bbrv3"

    @property
    def is_bbr(self) -> bool:
        return self in (CcaKind.BBR_V1, CcaKind.BBR_V2, CcaKind.BBR_V3)

    @property
    def is_loss_based(self) -> bool:
        return self in (CcaKind.RENO, CcaKind.CUBIC)


@dataclass(frozen=True)
class LinkConfig:
    """One shared bottleneck link."""

    capacity_bps: float          # bottleneck rate in bits per second
    base_rtt_s: float            # sum of fixed one-way delays on the path
    buffer_bdp: float            # droptail buffer size as a multiple of BDP
    mtu_bytes: int = DEFAULT_MTU_BYTES

    @property
    def bdp_bytes(self) -> float:
        return self.capacity_bps / 8.0 * self.base_rtt_s

    @property
    def buffer_bytes(self) -> int:
        return buffer_packets(self) * self.mtu_bytes


@dataclass(frozen=True)
class FlowSpec:
    """One sender in a scenario."""

    id: int
    cca: CcaKind
    extra_delay_s: float = 0.0   # fixed per-sender one-way delay addition
    start_s: float = 0.0
    max_window_bytes: int = DEFAULT_MAX_WINDOW_BYTES


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one experiment cell."""

    link: LinkConfig
    flows: tuple
    duration_s: float
    analysis_window_s: float     # suffix of the run used for metrics
    trials: int = 3
    seed: int = 1
    # Width of the per-flow uniform delay draw, re-drawn per trial.  Zero
    # means all delays are exactly as in the FlowSpecs.
    delay_jitter_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))


def bdp_packets(link: LinkConfig) -> float:
    """Bandwidth-delay product expressed in MTU-sized packets (real-valued)."""
    return link.capacity_bps / 8.0 * link.base_rtt_s / link.mtu_bytes


def buffer_packets(link: LinkConfig) -> int:
    """Droptail buffer size in whole packets, rounded to nearest, at least 1.

    Rounds half away from zero so the result does not depend on the
    round-half-even behavior of ``round``.
    """
    raw = link.buffer_bdp * bdp_packets(link)
    return max(1, int(math.floor(raw + 0.5)))


def validate(scenario: ScenarioConfig) -> list:
    """Collect every invariant violation in ``scenario``.

    Total: returns a list of human-readable strings and never raises, so a
    harness can report all problems at once.  An empty list means valid.
    """
    v = []
    link = scenario.link
    if not link.capacity_bps > 0:
        v.append(f"link.capacity_bps must be positive, got {link.capacity_bps}")
    if not link.base_rtt_s > 0:
        v.append(f"link.base_rtt_s must be positive, got {link.base_rtt_s}")
    if not link.buffer_bdp > 0:
        v.append(f"link.buffer_bdp must be positive, got {link.buffer_bdp}")
    if link.mtu_bytes < MIN_MTU_BYTES:
        v.append(f"link.mtu_bytes must be >= {MIN_MTU_BYTES}, got {link.mtu_bytes}")

    seen = set()
    for f in scenario.flows:
        if f.id in seen:
            v.append(f"duplicate flow id {f.id}")
        seen.add(f.id)
        if f.start_s < 0:
            v.append(f"flow {f.id}: start_s must be >= 0, got {f.start_s}")
        if not f.max_window_bytes > 0:
            v.append(f"flow {f.id}: max_window_bytes must be positive, got {f.max_window_bytes}")
        if f.extra_delay_s < 0:
            v.append(f"flow {f.id}: extra_delay_s must be >= 0, got {f.extra_delay_s}")

    if not scenario.duration_s > 0:
        v.append(f"duration_s must be positive, got {scenario.duration_s}")
    if scenario.analysis_window_s > scenario.duration_s:
        v.append(
            f"analysis_window_s ({scenario.analysis_window_s}) exceeds "
            f"duration_s ({scenario.duration_s})"
        )
    if not scenario.analysis_window_s > 0:
        v.append(f"analysis_window_s must be positive, got {scenario.analysis_window_s}")
    if scenario.trials < 1:
        v.append(f"trials must be >= 1, got {scenario.trials}")
    if scenario.delay_jitter_s < 0:
        v.append(f"delay_jitter_s must be >= 0, got {scenario.delay_jitter_s}")
    return v


def materialize_delays(scenario: ScenarioConfig, trial: int) -> tuple:
    """Concrete per-flow extra delays for one trial.

    Each flow draws its jitter from an RNG seeded by (scenario seed, trial,
    flow id), so adding or removing flows never shifts the draws of the
    remaining ones, and every engine sees identical delays for the same cell.
    """
    out = []
    for f in scenario.flows:
        jitter = 0.0
        if scenario.delay_jitter_s > 0:
            rng = random.Random(f"cclab:{scenario.seed}:{trial}:{f.id}")
            jitter = rng.uniform(0.0, scenario.delay_jitter_s)
        out.append(f.extra_delay_s + jitter)
    return tuple(out)


# ----------------------------------------------------------------------------
# Scenario file format: flat key-value text with repeated [flow] sections.
#
#   capacity_mbps = 10
#   base_rtt_ms = 40
#   buffer_bdp = 8
#   mtu_bytes = 1500
#   duration_s = 1000
#   analysis_window_s = 400
#   trials = 3
#   seed = 1
#   [flow]
#   cca = bbrv1
#   start_s = 0
#   extra_delay_ms = 0
#   max_window_bytes = 67108864
#
# The optional top-level key `delay_jitter_ms` configures the per-trial
# uniform delay draw.
# ----------------------------------------------------------------------------

_TOP_KEYS = {
    "capacity_mbps", "base_rtt_ms", "buffer_bdp", "mtu_bytes",
    "duration_s", "analysis_window_s", "trials", "seed", "delay_jitter_ms",
}
_FLOW_KEYS = {"cca", "start_s", "extra_delay_ms", "max_window_bytes"}


class ScenarioFormatError(ValueError):
    pass


def parse_scenario(text: str) -> ScenarioConfig:
    top = {}
    flows = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[flow]":
            current = {}
            flows.append(current)
            continue
        if line.startswith("["):
            raise ScenarioFormatError(f"line {lineno}: unknown section {line!r}")
        if "=" not in line:
            raise ScenarioFormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        allowed = _TOP_KEYS if current is top else _FLOW_KEYS
        if key not in allowed:
            raise ScenarioFormatError(f"line {lineno}: unknown key {key!r}")
        current[key] = value

    missing = {"capacity_mbps", "base_rtt_ms", "buffer_bdp", "duration_s",
               "analysis_window_s"} - top.keys()
    if missing:
        raise ScenarioFormatError(f"missing keys: {', '.join(sorted(missing))}")

    link = LinkConfig(
        capacity_bps=float(top["capacity_mbps"]) * 1e6,
        base_rtt_s=float(top["base_rtt_ms"]) / 1e3,
        buffer_bdp=float(top["buffer_bdp"]),
        mtu_bytes=int(top.get("mtu_bytes", DEFAULT_MTU_BYTES)),
    )
    specs = []
    for i, fdict in enumerate(flows):
        if "cca" not in fdict:
            raise ScenarioFormatError(f"[flow] section {i}: missing 'cca'")
        try:
            cca = CcaKind(fdict["cca"].lower())
        except ValueError:
            names = ", ".join(k.value for k in CcaKind)
            raise ScenarioFormatError(
                f"[flow] section {i}: unknown cca {fdict['cca']!r} (expected one of {names})"
            ) from None
        specs.append(FlowSpec(
            id=i,
            cca=cca,
            start_s=float(fdict.get("start_s", 0.0)),
            extra_delay_s=float(fdict.get("extra_delay_ms", 0.0)) / 1e3,
            max_window_bytes=int(fdict.get("max_window_bytes", DEFAULT_MAX_WINDOW_BYTES)),
        ))
    return ScenarioConfig(
        link=link,
        flows=tuple(specs),
        duration_s=float(top["duration_s"]),
        analysis_window_s=float(top["analysis_window_s"]),
        trials=int(top.get("trials", 3)),
        seed=int(top.get("seed", 1)),
        delay_jitter_s=float(top.get("delay_jitter_ms", 0.0)) / 1e3,
    )


def format_scenario(scenario: ScenarioConfig) -> str:
    link = scenario.link
    lines = [
        f"capacity_mbps = {link.capacity_bps / 1e6:g}",
        f"base_rtt_ms = {link.base_rtt_s * 1e3:g}",
        f"buffer_bdp = {link.buffer_bdp:g}",
        f"mtu_bytes = {link.mtu_bytes}",
        f"duration_s = {scenario.duration_s:g}",
        f"analysis_window_s = {scenario.analysis_window_s:g}",
        f"trials = {scenario.trials}",
        f"seed = {scenario.seed}",
    ]
    if scenario.delay_jitter_s:
        lines.append(f"delay_jitter_ms = {scenario.delay_jitter_s * 1e3:g}")
    for f in scenario.flows:
        lines += [
            "[flow]",
            f"cca = {f.cca.value}",
            f"start_s = {f.start_s:g}",
            f"extra_delay_ms = {f.extra_delay_s * 1e3:g}",
            f"max_window_bytes = {f.max_window_bytes}",
        ]
    return "\n".join(lines) + "\n"


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())


def save_scenario(scenario: ScenarioConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(format_scenario(scenario))


def with_buffer(scenario: ScenarioConfig, buffer_bdp: float) -> ScenarioConfig:
    """Copy of ``scenario`` with a different buffer size."""
    return replace(scenario, link=replace(scenario.link, buffer_bdp=buffer_bdp))
