"""Run configuration: packaged defaults < user file < CLI overrides.

The user file is YAML or JSON (JSON parses as YAML).  Unknown keys are
rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from conformal.calibrator import ALL_METHODS, MethodKind, parse_method
from conformal.score_kernels import ScoreSpec
from experiments.evaluation import SplitConfig
from experiments.synthetic import SynthConfig
from system.config import CONFIG, deep_merge
from system.errors import ConfigError
from system.logger import get_logger

LOGGER = get_logger("run_config")

TOP_KEYS = {
    "dataset", "synth", "alpha", "epsilon", "score", "methods", "splits", "sweep",
    "master_seed", "output", "csv_output", "splits_output", "force_nonempty", "softmax",
}
SECTION_KEYS = {
    "score": {"kind", "a", "b", "randomized"},
    "splits": {"n_splits", "calib_fraction", "resample_noise", "noisy_test"},
    "sweep": {"eps_grid"},
    "synth": {"n", "k", "concentration", "temperature", "seed", "swap_top2_rate"},
}


def _check_keys(document: Dict[str, Any], where: str) -> None:
    unknown = set(document) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    for section, allowed in SECTION_KEYS.items():
        value = document.get(section)
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: '{section}' must be a mapping")
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)} in '{section}'")


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    _check_keys(data, str(path))
    return data


# ── Typed field access ────────────────────────────────────────────────────────

def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def _integer(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _flag(value: Any, name: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false, got {value!r}")
    return value


def _optional_path(value: Any, name: str) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, (str, Path)):
        raise ConfigError(f"{name} must be a path, got {value!r}")
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    epsilon: float
    score: ScoreSpec
    methods: Tuple[MethodKind, ...] = ALL_METHODS
    n_splits: int = 1000
    calib_fraction: float = 0.5
    resample_noise: bool = True
    noisy_test: bool = False
    master_seed: int = 0
    force_nonempty: bool = False
    softmax: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)
    dataset: Optional[str] = None
    eps_grid: Optional[List[float]] = None
    output: Optional[str] = None
    csv_output: Optional[str] = None
    splits_output: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be >= 0, got {self.master_seed}")

    def split_config(self, epsilon: Optional[float] = None, threads: Optional[int] = None) -> SplitConfig:
        return SplitConfig(
            n_splits=self.n_splits,
            calib_fraction=self.calib_fraction,
            alpha=self.alpha,
            epsilon=self.epsilon if epsilon is None else epsilon,
            score_spec=self.score,
            methods=self.methods,
            master_seed=self.master_seed,
            resample_noise=self.resample_noise,
            noisy_test=self.noisy_test,
            force_nonempty=self.force_nonempty,
            keep_splits=self.splits_output is not None,
            threads=threads,
        )

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration as embedded in every artifact."""
        return {
            "dataset": self.dataset,
            "synth": None if self.dataset else self.synth.to_dict(),
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "score": self.score.to_dict(),
            "methods": [m.value for m in self.methods],
            "splits": {
                "n_splits": self.n_splits,
                "calib_fraction": self.calib_fraction,
                "resample_noise": self.resample_noise,
                "noisy_test": self.noisy_test,
            },
            "sweep": {"eps_grid": self.eps_grid},
            "master_seed": self.master_seed,
            "force_nonempty": self.force_nonempty,
            "softmax": self.softmax,
        }


def _from_document(doc: Dict[str, Any]) -> RunConfig:
    score = doc.get("score") or {}
    splits = doc.get("splits") or {}
    synth = doc.get("synth") or {}
    sweep = doc.get("sweep") or {}

    methods = doc.get("methods")
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m.strip()]
    if not isinstance(methods, (list, tuple)) or not methods:
        raise ConfigError(f"methods must be a non-empty list, got {methods!r}")
    parsed = tuple(parse_method(m.strip() if isinstance(m, str) else m) for m in methods)
    if len(set(parsed)) != len(parsed):
        raise ConfigError("methods must not repeat")

    eps_grid = sweep.get("eps_grid")
    if eps_grid is not None:
        if not isinstance(eps_grid, (list, tuple)) or not eps_grid:
            raise ConfigError(f"sweep.eps_grid must be a non-empty list, got {eps_grid!r}")
        eps_grid = [_number(e, "sweep.eps_grid") for e in eps_grid]

    randomized = score.get("randomized", False)
    return RunConfig(
        alpha=_number(doc.get("alpha"), "alpha"),
        epsilon=_number(doc.get("epsilon"), "epsilon"),
        score=ScoreSpec(
            kind=score.get("kind", "APS"),
            raps_a=_number(score.get("a", 0.1), "score.a"),
            raps_b=_number(score.get("b", 2), "score.b"),
            randomized=_flag(randomized, "score.randomized"),
        ),
        methods=parsed,
        n_splits=_integer(splits.get("n_splits", 1000), "splits.n_splits"),
        calib_fraction=_number(splits.get("calib_fraction", 0.5), "splits.calib_fraction"),
        resample_noise=_flag(splits.get("resample_noise", True), "splits.resample_noise"),
        noisy_test=_flag(splits.get("noisy_test", False), "splits.noisy_test"),
        master_seed=_integer(doc.get("master_seed", 0), "master_seed"),
        force_nonempty=_flag(doc.get("force_nonempty", False), "force_nonempty"),
        softmax=_flag(doc.get("softmax", False), "softmax"),
        synth=SynthConfig(
            n=_integer(synth.get("n", 4000), "synth.n"),
            k=_integer(synth.get("k", 8), "synth.k"),
            concentration=_number(synth.get("concentration", 0.1), "synth.concentration"),
            temperature=_number(synth.get("temperature", 1.0), "synth.temperature"),
            seed=_integer(synth.get("seed", 0), "synth.seed"),
            swap_top2_rate=_number(synth.get("swap_top2_rate", 0.0), "synth.swap_top2_rate"),
        ),
        dataset=_optional_path(doc.get("dataset"), "dataset"),
        eps_grid=eps_grid,
        output=_optional_path(doc.get("output"), "output"),
        csv_output=_optional_path(doc.get("csv_output"), "csv_output"),
        splits_output=_optional_path(doc.get("splits_output"), "splits_output"),
    )


def _prune_none(overrides: Dict[str, Any]) -> Dict[str, Any]:
    pruned: Dict[str, Any] = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            inner = _prune_none(value)
            if inner:
                pruned[key] = inner
        elif value is not None:
            pruned[key] = value
    return pruned


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Resolve a run configuration.

    Args:
        path: optional YAML/JSON file merged over the packaged defaults.
        overrides: nested mapping of explicit settings (CLI flags); ``None``
            values mean "not given" and are dropped.

    Returns:
        A validated :class:`RunConfig`.
    """
    document = copy.deepcopy(CONFIG["defaults"])
    if path is not None:
        document = deep_merge(document, read_config_file(path))
    if overrides:
        flags = _prune_none(overrides)
        _check_keys(flags, "command line")
        document = deep_merge(document, flags)
    config = _from_document(document)
    LOGGER.debug("resolved run config: %s", config.to_dict())
    return config
