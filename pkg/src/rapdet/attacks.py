"""Rogue-AP attack injection: turn a benign trace into an attacked one plus labels.

Three attack models against one target AP inside a contiguous window covering
a fraction of the trace:

  additive_gain   target RSSI += Normal(mu_adv, sigma_adv^2) where present
  replacement     target RSSI replaced (inserted if absent) by Uniform(range)
  phantom_ap      target RSSI replaced by the path-loss signal a transmitter
                  at a chosen position would produce at the client's true
                  position (an impersonator with its own radio)

Everything is a pure function of (trace, spec): two calls with the same seed
produce identical traces and labels, and out-of-window scans are the benign
objects themselves.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from .base import check_trace
from .errors import ApNotInRegistry
from .geo import GeoPoint, LocalPoint, local_distance
from .model import ApId, ApRegistry, Scan
from .scene import PathLossModel, Scene, rss_from_distance


class AttackKind(str, Enum):
    ADDITIVE_GAIN = "additive_gain"
    REPLACEMENT = "replacement"
    PHANTOM_AP = "phantom_ap"


@dataclass(frozen=True, slots=True)
class AttackSpec:
    """Parameters of one attack against one target AP.

    rogue_position and coexistence apply to phantom_ap only: coexistence
    "replace" substitutes the phantom signal for the legitimate reading,
    "max" keeps whichever is stronger.
    """

    kind: AttackKind
    target_ap: ApId
    mu_adv: float = 10.0
    sigma_adv: float = 2.0
    replacement_range: tuple[float, float] = (-70.0, -55.0)
    window_fraction: float = 1.0 / 3.0
    rng_seed: int = 0
    rogue_position: GeoPoint | None = None
    coexistence: str = "replace"

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if not self.target_ap:
            raise ValueError("target_ap must be a non-empty AP id")
        if self.sigma_adv < 0.0:
            raise ValueError(f"sigma_adv must be >= 0, got {self.sigma_adv}")
        low, high = self.replacement_range
        if not (math.isfinite(low) and math.isfinite(high) and low < high):
            raise ValueError(f"replacement_range must be (low, high) with low < high, got {self.replacement_range}")
        object.__setattr__(self, "replacement_range", (float(low), float(high)))
        if not 0.0 < self.window_fraction <= 1.0:
            raise ValueError(f"window_fraction must be in (0, 1], got {self.window_fraction}")
        if self.coexistence not in ("replace", "max"):
            raise ValueError(f"coexistence must be 'replace' or 'max', got {self.coexistence!r}")


@dataclass(frozen=True, slots=True)
class AttackLabel:
    """Ground truth for one timestamp: is the attack live, and which APs are rogue."""

    t: int
    active: bool
    rogue_aps: frozenset[ApId]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rogue_aps", frozenset(self.rogue_aps))
        if bool(self.rogue_aps) != self.active:
            raise ValueError(f"label t={self.t}: rogue_aps must be non-empty iff active")


def attack_window(spec: AttackSpec, n: int, rng: np.random.Generator) -> range:
    """Contiguous window of floor(window_fraction * n) scans at a seeded offset.

    The epsilon guards against float products landing just under an integer
    (window_fraction = 1/3 on a length-180 trace must give 60, not 59).
    """
    width = math.floor(spec.window_fraction * n + 1e-9)
    if width < 1:
        raise ValueError(f"window_fraction {spec.window_fraction} yields an empty window on a trace of length {n}")
    offset = int(rng.integers(0, n - width + 1))
    return range(offset, offset + width)


def inject(
    trace: Sequence[Scan],
    spec: AttackSpec,
    registry: ApRegistry | None = None,
    model: PathLossModel | None = None,
) -> tuple[list[Scan], list[AttackLabel]]:
    """Apply the attack; return (attacked trace, one label per timestamp).

    Out-of-window scans are returned as-is (the same objects). additive_gain
    leaves timestamps where the target is absent untouched (there is no
    legitimate signal to amplify) but still labels them active; replacement
    and phantom_ap insert the rogue reading even where the target was absent.
    phantom_ap needs `model`, `spec.rogue_position`, ground-truth positions on
    every in-window scan, and (when a registry is given) a surveyed target.
    """
    trace = check_trace(trace)
    n = len(trace)
    target = spec.target_ap
    if spec.kind in (AttackKind.ADDITIVE_GAIN, AttackKind.REPLACEMENT):
        if not any(target in scan.rssi for scan in trace):
            raise ValueError(f"target AP {target!r} never appears in the trace")
    else:
        if model is None:
            raise ValueError("phantom_ap needs a path-loss model")
        if spec.rogue_position is None:
            raise ValueError("phantom_ap needs spec.rogue_position")
        if registry is not None and target not in registry:
            raise ApNotInRegistry(f"impersonated AP {target!r} is not in the registry")

    root = np.random.SeedSequence(spec.rng_seed)
    offset_seq, draw_seq = root.spawn(2)
    window = attack_window(spec, n, np.random.default_rng(offset_seq))
    width = len(window)
    draw_rng = np.random.default_rng(draw_seq)
    if spec.kind is AttackKind.ADDITIVE_GAIN:
        draws = draw_rng.normal(spec.mu_adv, spec.sigma_adv, size=width)
    elif spec.kind is AttackKind.REPLACEMENT:
        low, high = spec.replacement_range
        draws = draw_rng.uniform(low, high, size=width)
    else:
        draws = draw_rng.standard_normal(width)

    attacked: list[Scan] = []
    labels: list[AttackLabel] = []
    for i, scan in enumerate(trace):
        if i not in window:
            attacked.append(scan)
            labels.append(AttackLabel(t=scan.t, active=False, rogue_aps=frozenset()))
            continue
        draw = float(draws[i - window.start])
        rssi = dict(scan.rssi)
        if spec.kind is AttackKind.ADDITIVE_GAIN:
            if target in rssi:
                rssi[target] = rssi[target] + draw
        elif spec.kind is AttackKind.REPLACEMENT:
            rssi[target] = draw
        else:
            if scan.truth is None:
                raise ValueError(f"t={scan.t}: phantom_ap needs ground-truth client positions")
            phantom = rss_from_distance(model, local_distance(scan.truth, spec.rogue_position), draw)
            if spec.coexistence == "max" and target in rssi:
                phantom = max(phantom, rssi[target])
            rssi[target] = phantom
        attacked.append(Scan(t=scan.t, rssi=rssi, truth=scan.truth))
        labels.append(AttackLabel(t=scan.t, active=True, rogue_aps=frozenset({target})))
    return attacked, labels


@dataclass(frozen=True, slots=True)
class AttackCase:
    """One attacked trace with its spec and per-timestamp ground truth."""

    spec: AttackSpec
    trace: tuple[Scan, ...]
    labels: tuple[AttackLabel, ...]


def make_attack_suite(
    scene: Scene,
    seeds: Sequence[int],
    *,
    sigma_adv: float = 2.0,
    rogue_position: GeoPoint | None = None,
    kinds: Sequence[AttackKind] = tuple(AttackKind),
) -> list[AttackCase]:
    """len(seeds) attacked traces per kind off the scene's benign trace.

    Targets rotate through the scene's APs; each (kind, seed) pair gets its
    own derived RNG stream. Without an explicit rogue_position the phantom
    transmitter is drawn uniformly inside the scene footprint at 12 m height,
    seeded per case.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    ap_ids = scene.registry.ap_ids()
    cases: list[AttackCase] = []
    for kind_idx, kind in enumerate(AttackKind(k) for k in kinds):
        for seed_idx, seed in enumerate(seeds):
            case_seed = int(seed) * len(AttackKind) + kind_idx
            target = ap_ids[seed_idx % len(ap_ids)]
            rogue = rogue_position
            if kind is AttackKind.PHANTOM_AP and rogue is None:
                pos_rng = np.random.default_rng([case_seed, 97])
                rogue = scene.frame.to_geo(
                    LocalPoint(
                        float(pos_rng.uniform(0.0, scene.config.width)),
                        float(pos_rng.uniform(0.0, scene.config.depth)),
                        12.0,
                    )
                )
            spec = AttackSpec(
                kind=kind,
                target_ap=target,
                sigma_adv=sigma_adv,
                rng_seed=case_seed,
                rogue_position=rogue,
            )
            attacked, labels = inject(list(scene.trace), spec, scene.registry, scene.config.path_loss)
            cases.append(AttackCase(spec=spec, trace=tuple(attacked), labels=tuple(labels)))
    return cases


def attack_spec_to_dict(spec: AttackSpec) -> dict[str, Any]:
    rogue = spec.rogue_position
    return {
        "kind": spec.kind.value,
        "target_ap": spec.target_ap,
        "mu_adv": spec.mu_adv,
        "sigma_adv": spec.sigma_adv,
        "replacement_range": list(spec.replacement_range),
        "window_fraction": spec.window_fraction,
        "rng_seed": spec.rng_seed,
        "rogue_position": None if rogue is None else [rogue.lat, rogue.lon, rogue.height],
        "coexistence": spec.coexistence,
    }


def attack_spec_from_dict(raw: dict[str, Any]) -> AttackSpec:
    kwargs = dict(raw)
    rogue = kwargs.get("rogue_position")
    if rogue is not None:
        kwargs["rogue_position"] = GeoPoint(float(rogue[0]), float(rogue[1]), float(rogue[2]))
    rng = kwargs.get("replacement_range")
    if rng is not None:
        kwargs["replacement_range"] = (float(rng[0]), float(rng[1]))
    return AttackSpec(**kwargs)


def labels_to_rows(labels: Sequence[AttackLabel]) -> list[dict[str, Any]]:
    return [{"t": lab.t, "active": lab.active, "rogue": sorted(lab.rogue_aps)} for lab in labels]


def labels_from_rows(rows: Sequence[dict[str, Any]]) -> list[AttackLabel]:
    return [
        AttackLabel(t=int(row["t"]), active=bool(row["active"]), rogue_aps=frozenset(row["rogue"]))
        for row in rows
    ]
