"""Config-driven pipeline stages and the on-disk artifact layout.

A scenario file is JSON. Every field has a default; unknown keys are rejected
at every level. One master ``seed`` drives all randomness: the scene seed, the
subset-sampling seed, and the per-case attack seeds are derived from it, and
per-component ``rng_seed`` keys are rejected so a config cannot silently
contradict its own seed.

Artifact layout under the output directory:

    scene/meta.json  registry.csv  trace.jsonl  [fingerprints.jsonl]
    attacks/<kind>-<idx>/spec.json  trace.jsonl  labels.jsonl
    detect/<method>/calibration.json  <case>.jsonl
    eval/roc.csv  recovery.csv  sampling.csv
    manifest.json

Each stage records what it wrote in manifest.json (config hash, seed, file
checksums). Stages are pure functions of config + upstream artifacts; running
one twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .attacks import (
    AttackCase,
    AttackKind,
    AttackSpec,
    attack_spec_from_dict,
    attack_spec_to_dict,
    inject,
    labels_from_rows,
    labels_to_rows,
    make_attack_suite,
)
from .baselines import ClusteringDetector, EcodDetector
from .evaluation import (
    RECOVERY_COLUMNS,
    ROC_COLUMNS,
    SAMPLING_COLUMNS,
    calibrate,
    evaluate_detection,
    evaluate_recovery,
    fit_positioner,
    roc_rows,
    run_tasks,
    sampling_rows,
    sampling_sweep,
    write_csv,
)
from .geo import GeoPoint, LocalFrame
from .io import (
    load_jsonl,
    load_registry,
    load_scene_meta,
    load_trace,
    save_json,
    save_jsonl,
    save_registry,
    save_trace,
    scene_origin,
)
from .model import FingerprintDatabase
from .raim import GmRaimDetector, RaimParams
from .scene import (
    PathLossModel,
    Scene,
    SceneConfig,
    Trajectory,
    generate_scene,
    scene_config_to_dict,
)
from .subsets import SubsetPlan

DETECTOR_NAMES = ("gm_raim", "clustering", "ecod")
DEFAULT_TARGETS = tuple(round(0.01 * k, 2) for k in range(1, 11))


@dataclass(frozen=True, slots=True)
class SuiteSpec:
    """Generated attack matrix: per_kind traces for each attack kind."""

    per_kind: int = 16
    sigma_adv: float = 2.0
    kinds: tuple[AttackKind, ...] = tuple(AttackKind)
    rogue_position: GeoPoint | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kinds", tuple(AttackKind(k) for k in self.kinds))
        if self.per_kind < 1:
            raise ValueError(f"per_kind must be >= 1, got {self.per_kind}")
        if not self.kinds:
            raise ValueError("kinds must be non-empty")
        if self.sigma_adv < 0.0:
            raise ValueError(f"sigma_adv must be >= 0, got {self.sigma_adv}")


@dataclass(frozen=True, slots=True)
class SamplingSpec:
    """Sampling-ratio sweep settings; enabled=False skips sampling.csv."""

    enabled: bool = True
    ratios: tuple[float, ...] = (0.25, 0.4, 0.7, 1.0)
    n_seeds: int = 10
    traces_per_seed: int = 4
    target_fpr: float = 0.05
    sigma_adv: float = 2.0

    def __post_init__(self) -> None:
        if self.n_seeds < 1 or self.traces_per_seed < 1:
            raise ValueError("n_seeds and traces_per_seed must be >= 1")
        if not self.ratios:
            raise ValueError("ratios must be non-empty")


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    plan: SubsetPlan = field(default_factory=SubsetPlan)
    raim: RaimParams = field(default_factory=RaimParams)
    backend: str = "distance"
    detectors: tuple[str, ...] = DETECTOR_NAMES
    targets: tuple[float, ...] = DEFAULT_TARGETS
    target_fpr: float = 0.05
    attacks: tuple[AttackSpec, ...] | None = None
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    clustering_window: int = 30
    clustering_max_iterations: int = 50
    ecod_lag: int = 1
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self) -> None:
        if self.backend not in ("distance", "fingerprint"):
            raise ValueError(f"backend must be 'distance' or 'fingerprint', got {self.backend!r}")
        if not self.detectors:
            raise ValueError("detectors must be non-empty")
        for name in self.detectors:
            if name not in DETECTOR_NAMES:
                raise ValueError(f"unknown detector {name!r}; choose from {DETECTOR_NAMES}")
        if len(set(self.detectors)) != len(self.detectors):
            raise ValueError("detectors must not repeat")
        if not self.targets:
            raise ValueError("targets must be non-empty")
        for t in (*self.targets, self.target_fpr):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"false-positive targets must be in [0, 1], got {t}")
        if self.attacks is not None and not self.attacks:
            raise ValueError("explicit attacks list must be non-empty (omit it to use the suite)")


# --- config parsing -----------------------------------------------------------


def _check_keys(raw: dict[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    if "rng_seed" in raw:
        raise ValueError(f"{where}: rng_seed is derived from the top-level seed; remove it")


def _path_loss_from_dict(raw: dict[str, Any]) -> PathLossModel:
    _check_keys(raw, {"rss_at_1m", "exponent", "shadowing_sigma", "min_distance"}, "scene.path_loss")
    return PathLossModel(**raw)


def _trajectory_from_dict(raw: dict[str, Any]) -> Trajectory:
    _check_keys(raw, {"waypoints", "random_waypoints", "duration", "speed_mps", "margin"}, "scene.trajectory")
    kwargs = dict(raw)
    if "waypoints" in kwargs:
        kwargs["waypoints"] = tuple((float(x), float(y)) for x, y in kwargs["waypoints"])
    return Trajectory(**kwargs)


def _geo_from_list(raw: Any, where: str) -> GeoPoint:
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ValueError(f"{where}: expected [lat, lon, height]")
    return GeoPoint(float(raw[0]), float(raw[1]), float(raw[2]))


def scene_config_from_dict(raw: dict[str, Any], seed: int) -> SceneConfig:
    _check_keys(
        raw,
        {
            "width", "depth", "ap_count", "ap_placement", "ap_height_range", "origin",
            "path_loss", "visibility_floor_dbm", "fingerprint_grid_step",
            "fingerprint_samples", "client_height", "trajectory",
        },
        "scene",
    )
    kwargs = dict(raw)
    if "origin" in kwargs:
        kwargs["origin"] = _geo_from_list(kwargs["origin"], "scene.origin")
    if "path_loss" in kwargs:
        kwargs["path_loss"] = _path_loss_from_dict(kwargs["path_loss"])
    if "trajectory" in kwargs:
        kwargs["trajectory"] = _trajectory_from_dict(kwargs["trajectory"])
    if "ap_height_range" in kwargs:
        kwargs["ap_height_range"] = tuple(float(v) for v in kwargs["ap_height_range"])
    return SceneConfig(rng_seed=seed, **kwargs)


def scenario_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    _check_keys(
        raw,
        {
            "scene", "plan", "raim", "backend", "detectors", "targets", "target_fpr",
            "attacks", "suite", "sampling", "clustering_window",
            "clustering_max_iterations", "ecod_lag", "seed", "out_dir",
        },
        "scenario",
    )
    seed = int(raw.get("seed", 0))
    kwargs: dict[str, Any] = {"seed": seed}
    kwargs["scene"] = scene_config_from_dict(dict(raw.get("scene", {})), seed)

    plan_raw = dict(raw.get("plan", {}))
    _check_keys(plan_raw, {"min_size", "max_size", "ratio"}, "plan")
    kwargs["plan"] = SubsetPlan(rng_seed=seed, **plan_raw)

    raim_raw = dict(raw.get("raim", {}))
    _check_keys(raim_raw, {"n_lambda", "exclusion", "strict_inequality", "variance_convention"}, "raim")
    kwargs["raim"] = RaimParams(**raim_raw)

    suite_raw = dict(raw.get("suite", {}))
    _check_keys(suite_raw, {"per_kind", "sigma_adv", "kinds", "rogue_position"}, "suite")
    if "kinds" in suite_raw:
        suite_raw["kinds"] = tuple(AttackKind(k) for k in suite_raw["kinds"])
    if suite_raw.get("rogue_position") is not None:
        suite_raw["rogue_position"] = _geo_from_list(suite_raw["rogue_position"], "suite.rogue_position")
    kwargs["suite"] = SuiteSpec(**suite_raw)

    sampling_raw = dict(raw.get("sampling", {}))
    _check_keys(
        sampling_raw,
        {"enabled", "ratios", "n_seeds", "traces_per_seed", "target_fpr", "sigma_adv"},
        "sampling",
    )
    if "ratios" in sampling_raw:
        sampling_raw["ratios"] = tuple(float(r) for r in sampling_raw["ratios"])
    kwargs["sampling"] = SamplingSpec(**sampling_raw)

    if raw.get("attacks") is not None:
        kwargs["attacks"] = tuple(attack_spec_from_dict(dict(a)) for a in raw["attacks"])
    for key in ("backend", "target_fpr", "clustering_window", "clustering_max_iterations", "ecod_lag", "out_dir"):
        if key in raw:
            kwargs[key] = raw[key]
    if "detectors" in raw:
        kwargs["detectors"] = tuple(raw["detectors"])
    if "targets" in raw:
        kwargs["targets"] = tuple(float(t) for t in raw["targets"])
    return ScenarioConfig(**kwargs)


def load_scenario(
    path: str | Path | None,
    *,
    seed: int | None = None,
    out: str | Path | None = None,
    backend: str | None = None,
) -> ScenarioConfig:
    """Read a scenario file (or take all defaults) and apply flag overrides.

    The seed override re-derives every component seed, not just the top-level
    field, by re-parsing the raw dict.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        parsed = json.loads(text)
        if not isinstance(parsed, dict):
            raise ValueError(f"{path}: scenario file must contain a JSON object")
        raw = parsed
    if seed is not None:
        raw["seed"] = int(seed)
    if backend is not None:
        raw["backend"] = backend
    if out is not None:
        raw["out_dir"] = str(out)
    return scenario_from_dict(raw)


def scenario_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    suite = config.suite
    rogue = suite.rogue_position
    return {
        "scene": scene_config_to_dict(config.scene),
        "plan": {
            "min_size": config.plan.min_size,
            "max_size": config.plan.max_size,
            "ratio": config.plan.ratio,
            "rng_seed": config.plan.rng_seed,
        },
        "raim": {
            "n_lambda": config.raim.n_lambda,
            "exclusion": config.raim.exclusion,
            "strict_inequality": config.raim.strict_inequality,
            "variance_convention": config.raim.variance_convention,
        },
        "backend": config.backend,
        "detectors": list(config.detectors),
        "targets": list(config.targets),
        "target_fpr": config.target_fpr,
        "attacks": None if config.attacks is None else [attack_spec_to_dict(a) for a in config.attacks],
        "suite": {
            "per_kind": suite.per_kind,
            "sigma_adv": suite.sigma_adv,
            "kinds": [k.value for k in suite.kinds],
            "rogue_position": None if rogue is None else [rogue.lat, rogue.lon, rogue.height],
        },
        "sampling": {
            "enabled": config.sampling.enabled,
            "ratios": list(config.sampling.ratios),
            "n_seeds": config.sampling.n_seeds,
            "traces_per_seed": config.sampling.traces_per_seed,
            "target_fpr": config.sampling.target_fpr,
            "sigma_adv": config.sampling.sigma_adv,
        },
        "clustering_window": config.clustering_window,
        "clustering_max_iterations": config.clustering_max_iterations,
        "ecod_lag": config.ecod_lag,
        "seed": config.seed,
    }


def config_hash(config: ScenarioConfig) -> str:
    """Hash of the semantic config: everything except where output lands."""
    blob = json.dumps(scenario_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- manifest -----------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _update_manifest(out: Path, config: ScenarioConfig, created: Sequence[Path]) -> Path:
    """Merge this stage's files into manifest.json, keyed by path relative to out.

    A manifest left by a different config is discarded wholesale; its file
    list would describe artifacts this config did not produce.
    """
    manifest_path = out / "manifest.json"
    chash = config_hash(config)
    files: dict[str, str] = {}
    if manifest_path.exists():
        try:
            old = json.loads(manifest_path.read_text())
        except ValueError:
            old = {}
        if isinstance(old, dict) and old.get("config_hash") == chash and isinstance(old.get("files"), dict):
            files = dict(old["files"])
    for path in created:
        files[path.relative_to(out).as_posix()] = _sha256_file(path)
    save_json(manifest_path, {"config_hash": chash, "seed": config.seed, "files": files})
    return manifest_path


def _cleanup(created: Sequence[Path]) -> None:
    for path in reversed(list(created)):
        path.unlink(missing_ok=True)
        parent = path.parent
        try:
            parent.rmdir()
        except OSError:
            pass


# --- stages --------------------------------------------------------------------


def _out_dir(config: ScenarioConfig, out: str | Path | None) -> Path:
    return Path(out) if out is not None else Path(config.out_dir)


def _needs_fingerprints(config: ScenarioConfig) -> bool:
    return config.backend == "fingerprint"


def stage_gen_scene(config: ScenarioConfig, out: str | Path | None = None, workers: int = 1) -> list[Path]:
    out_path = _out_dir(config, out)
    scene_dir = out_path / "scene"
    scene_dir.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(config.scene, include_fingerprints=_needs_fingerprints(config))
    created: list[Path] = []
    try:
        save_json(scene_dir / "meta.json", scene.meta())
        created.append(scene_dir / "meta.json")
        save_registry(scene_dir / "registry.csv", scene.registry)
        created.append(scene_dir / "registry.csv")
        save_trace(scene_dir / "trace.jsonl", list(scene.trace))
        created.append(scene_dir / "trace.jsonl")
        if scene.fingerprints is not None:
            save_trace(scene_dir / "fingerprints.jsonl", scene.fingerprints)
            created.append(scene_dir / "fingerprints.jsonl")
    except BaseException:
        _cleanup(created)
        raise
    created.append(_update_manifest(out_path, config, created))
    return created


def _load_scene(config: ScenarioConfig, out_path: Path) -> Scene:
    scene_dir = out_path / "scene"
    if not (scene_dir / "meta.json").exists():
        raise FileNotFoundError(f"{scene_dir / 'meta.json'}: scene artifacts missing; run gen-scene first")
    meta = load_scene_meta(scene_dir / "meta.json")
    scene_cfg_raw = dict(meta.get("config", {}))
    scene_cfg_raw.pop("rng_seed", None)
    scene_cfg = scene_config_from_dict(scene_cfg_raw, int(meta.get("seed", config.seed)))
    registry = load_registry(scene_dir / "registry.csv")
    trace = load_trace(scene_dir / "trace.jsonl")
    fingerprints = None
    if _needs_fingerprints(config):
        fp_path = scene_dir / "fingerprints.jsonl"
        if not fp_path.exists():
            raise FileNotFoundError(f"{fp_path}: fingerprint backend needs the grid; rerun gen-scene")
        fingerprints = FingerprintDatabase(tuple(load_trace(fp_path)))
    frame = LocalFrame(scene_origin(meta))
    return Scene(config=scene_cfg, registry=registry, fingerprints=fingerprints, trace=tuple(trace), frame=frame)


def _suite_seeds(config: ScenarioConfig) -> list[int]:
    return [config.seed * 1000 + i for i in range(config.suite.per_kind)]


def _build_cases(config: ScenarioConfig, scene: Scene) -> list[tuple[str, AttackCase]]:
    """(case id, case) pairs; ids are <kind>-<per-kind index>."""
    if config.attacks is not None:
        cases = []
        for spec in config.attacks:
            attacked, labels = inject(list(scene.trace), spec, scene.registry, scene.config.path_loss)
            cases.append(AttackCase(spec=spec, trace=tuple(attacked), labels=tuple(labels)))
    else:
        cases = make_attack_suite(
            scene,
            seeds=_suite_seeds(config),
            sigma_adv=config.suite.sigma_adv,
            rogue_position=config.suite.rogue_position,
            kinds=config.suite.kinds,
        )
    counters: dict[str, int] = {}
    named = []
    for case in cases:
        kind = case.spec.kind.value
        idx = counters.get(kind, 0)
        counters[kind] = idx + 1
        named.append((f"{kind}-{idx:02d}", case))
    return named


def stage_inject(config: ScenarioConfig, out: str | Path | None = None, workers: int = 1) -> list[Path]:
    out_path = _out_dir(config, out)
    scene = _load_scene(config, out_path)
    created: list[Path] = []
    try:
        for case_id, case in _build_cases(config, scene):
            case_dir = out_path / "attacks" / case_id
            case_dir.mkdir(parents=True, exist_ok=True)
            save_json(case_dir / "spec.json", attack_spec_to_dict(case.spec))
            created.append(case_dir / "spec.json")
            save_trace(case_dir / "trace.jsonl", list(case.trace))
            created.append(case_dir / "trace.jsonl")
            save_jsonl(case_dir / "labels.jsonl", labels_to_rows(case.labels))
            created.append(case_dir / "labels.jsonl")
    except BaseException:
        _cleanup(created)
        raise
    created.append(_update_manifest(out_path, config, created))
    return created


def _load_cases(out_path: Path) -> list[tuple[str, AttackCase]]:
    attacks_dir = out_path / "attacks"
    if not attacks_dir.is_dir():
        raise FileNotFoundError(f"{attacks_dir}: attack artifacts missing; run inject first")
    named = []
    for case_dir in sorted(p for p in attacks_dir.iterdir() if p.is_dir()):
        spec = attack_spec_from_dict(json.loads((case_dir / "spec.json").read_text()))
        trace = tuple(load_trace(case_dir / "trace.jsonl"))
        labels = tuple(labels_from_rows(load_jsonl(case_dir / "labels.jsonl")))
        named.append((case_dir.name, AttackCase(spec=spec, trace=trace, labels=labels)))
    if not named:
        raise FileNotFoundError(f"{attacks_dir}: no attack cases found; run inject first")
    return named


def _make_detector(config: ScenarioConfig, name: str, scene: Scene):
    if name == "gm_raim":
        positioner = fit_positioner(scene, config.backend)
        return GmRaimDetector.from_params(positioner, config.raim, plan=config.plan)
    if name == "clustering":
        return ClusteringDetector(window=config.clustering_window, max_iterations=config.clustering_max_iterations)
    return EcodDetector(lag=config.ecod_lag)


def _verdict_rows(detector, trace, knob: float) -> list[dict[str, Any]]:
    if isinstance(detector, GmRaimDetector):
        profile = detector.profile_trace(trace)
        verdicts = detector.verdicts_from_profile(trace, profile, knob)
    else:
        verdicts = detector.verdicts(trace, knob)
    return [v.to_json_dict() for v in verdicts]


def _verdict_rows_task(args: tuple) -> list[dict[str, Any]]:
    return _verdict_rows(*args)


def stage_detect(config: ScenarioConfig, out: str | Path | None = None, workers: int = 1) -> list[Path]:
    out_path = _out_dir(config, out)
    scene = _load_scene(config, out_path)
    named_cases = _load_cases(out_path)
    created: list[Path] = []
    try:
        for name in config.detectors:
            detector = _make_detector(config, name, scene)
            knob = calibrate(detector, list(scene.trace), config.target_fpr)
            method_dir = out_path / "detect" / name
            method_dir.mkdir(parents=True, exist_ok=True)
            save_json(
                method_dir / "calibration.json",
                {
                    "method": name,
                    "knob_name": detector.knob_name,
                    "knob": knob,
                    "target_fpr": config.target_fpr,
                },
            )
            created.append(method_dir / "calibration.json")
            argses = [(detector, list(case.trace), knob) for _, case in named_cases]
            all_rows = run_tasks(_verdict_rows_task, argses, workers)
            for (case_id, _), rows in zip(named_cases, all_rows):
                save_jsonl(method_dir / f"{case_id}.jsonl", rows)
                created.append(method_dir / f"{case_id}.jsonl")
    except BaseException:
        _cleanup(created)
        raise
    created.append(_update_manifest(out_path, config, created))
    return created


def stage_evaluate(config: ScenarioConfig, out: str | Path | None = None, workers: int = 1) -> list[Path]:
    out_path = _out_dir(config, out)
    scene = _load_scene(config, out_path)
    named_cases = _load_cases(out_path)
    cases = [case for _, case in named_cases]
    eval_dir = out_path / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    try:
        rows: list[dict[str, Any]] = []
        for name in config.detectors:
            detector = _make_detector(config, name, scene)
            grouped = evaluate_detection(detector, cases, config.targets, benign_traces=[list(scene.trace)])
            rows.extend(roc_rows(name, grouped))
        write_csv(eval_dir / "roc.csv", ROC_COLUMNS, rows)
        created.append(eval_dir / "roc.csv")

        if "gm_raim" in config.detectors:
            detector = _make_detector(config, "gm_raim", scene)
            knob = calibrate(detector, list(scene.trace), config.target_fpr)
            rec_rows = []
            for case_id, case in named_cases:
                trace = list(case.trace)
                profile = detector.profile_trace(trace)
                verdicts = detector.verdicts_from_profile(trace, profile, knob)
                report = evaluate_recovery(detector.positioner, verdicts, trace, list(case.labels))
                rec_rows.append(
                    {
                        "case": case_id,
                        "attack": case.spec.kind.value,
                        "sigma_adv": case.spec.sigma_adv,
                        "target_fpr": config.target_fpr,
                        "knob": knob,
                        "active_count": len(report.t),
                        "rmse_before": report.rmse_before,
                        "rmse_after": report.rmse_after,
                    }
                )
            write_csv(eval_dir / "recovery.csv", RECOVERY_COLUMNS, rec_rows)
            created.append(eval_dir / "recovery.csv")

            if config.sampling.enabled:
                points = sampling_sweep(
                    config.scene,
                    seeds=[config.seed + i for i in range(config.sampling.n_seeds)],
                    ratios=config.sampling.ratios,
                    target_fpr=config.sampling.target_fpr,
                    sigma_adv=config.sampling.sigma_adv,
                    traces_per_seed=config.sampling.traces_per_seed,
                    backend=config.backend,
                    workers=workers,
                )
                write_csv(eval_dir / "sampling.csv", SAMPLING_COLUMNS, sampling_rows(points))
                created.append(eval_dir / "sampling.csv")
    except BaseException:
        _cleanup(created)
        raise
    created.append(_update_manifest(out_path, config, created))
    return created


def stage_reproduce(config: ScenarioConfig, out: str | Path | None = None, workers: int = 1) -> list[Path]:
    """All stages in order; emits the full artifact tree plus the CSVs."""
    created = []
    created += stage_gen_scene(config, out, workers)
    created += stage_inject(config, out, workers)
    created += stage_detect(config, out, workers)
    created += stage_evaluate(config, out, workers)
    return created
