"""noisycp entrypoint: noise-robust conformal prediction from the command line."""

import json
import sys
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, List, Optional

import typer

from cli_io import commands
from cli_io.run_config import RunConfig, load_run_config
from system.errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, ConfigError, NoisyCPError
from system.logger import get_logger

__version__ = "0.1.0"

LOGGER = get_logger("main")

app = typer.Typer(
    name="noisycp",
    help="Conformal prediction sets that stay valid under uniform label noise.",
    add_completion=False,
    no_args_is_help=True,
)


# ── Shared options ────────────────────────────────────────────────────────────

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", "-c", help="YAML/JSON run config.")]
DatasetOpt = Annotated[Optional[Path], typer.Option("--dataset", "-d", help="CSV dataset; omit to use the synth block.")]
AlphaOpt = Annotated[Optional[float], typer.Option("--alpha", help="Miscoverage level in (0, 1).")]
EpsilonOpt = Annotated[Optional[float], typer.Option("--epsilon", "--eps", help="Label noise level in [0, 1).")]
ScoreOpt = Annotated[Optional[str], typer.Option("--score", help="HPS, APS or RAPS.")]
RapsAOpt = Annotated[Optional[float], typer.Option("--raps-a", help="RAPS penalty weight.")]
RapsBOpt = Annotated[Optional[float], typer.Option("--raps-b", help="RAPS rank offset.")]
RandomizedOpt = Annotated[Optional[bool], typer.Option("--randomized/--deterministic", help="Randomized APS/RAPS.")]
MethodsOpt = Annotated[Optional[str], typer.Option("--methods", help="Comma-separated methods, e.g. NOISY_CP,NR_CP.")]
SplitsOpt = Annotated[Optional[int], typer.Option("--n-splits", help="Repeated random splits.")]
FractionOpt = Annotated[Optional[float], typer.Option("--calib-fraction", help="Calibration share of the pool.")]
ResampleOpt = Annotated[Optional[bool], typer.Option("--resample-noise/--fixed-noise", help="Corrupt calibration labels per split.")]
NoisyTestOpt = Annotated[Optional[bool], typer.Option("--noisy-test/--clean-test", help="Score coverage against noisy test labels.")]
SeedOpt = Annotated[Optional[int], typer.Option("--master-seed", "--seed", help="Master seed.")]
OutputOpt = Annotated[Optional[Path], typer.Option("--output", "-o", help="Output file; stdout when omitted.")]
CsvOpt = Annotated[Optional[Path], typer.Option("--csv-output", help="Long-form CSV table.")]
SplitTableOpt = Annotated[Optional[Path], typer.Option("--splits-output", help="Per-split raw CSV table.")]
NonEmptyOpt = Annotated[Optional[bool], typer.Option("--force-nonempty/--allow-empty", help="Add the argmax class to empty sets.")]
SoftmaxOpt = Annotated[Optional[bool], typer.Option("--softmax/--no-softmax", help="Treat dataset columns as logits.")]
SynthNOpt = Annotated[Optional[int], typer.Option("--synth-n", help="Synthetic pool size.")]
SynthKOpt = Annotated[Optional[int], typer.Option("--synth-k", help="Synthetic class count.")]
SynthSeedOpt = Annotated[Optional[int], typer.Option("--synth-seed", help="Synthetic generator seed.")]
EpsGridOpt = Annotated[Optional[str], typer.Option("--eps-grid", help="Comma-separated noise levels.")]


def _path(value: Optional[Path]) -> Optional[str]:
    return None if value is None else str(value)


def _float_list(raw: Optional[str], name: str) -> Optional[List[float]]:
    if raw is None:
        return None
    try:
        return [float(item) for item in raw.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"{name} must be comma-separated numbers, got {raw!r}") from exc


def _resolve(config_path: Optional[Path], **flags: Any) -> RunConfig:
    """Merge explicit flags over the config file; unset flags stay ``None``."""
    overrides: Dict[str, Any] = {
        "dataset": _path(flags.get("dataset")),
        "alpha": flags.get("alpha"),
        "epsilon": flags.get("epsilon"),
        "score": {
            "kind": flags.get("score"),
            "a": flags.get("raps_a"),
            "b": flags.get("raps_b"),
            "randomized": flags.get("randomized"),
        },
        "methods": flags.get("methods"),
        "splits": {
            "n_splits": flags.get("n_splits"),
            "calib_fraction": flags.get("calib_fraction"),
            "resample_noise": flags.get("resample_noise"),
            "noisy_test": flags.get("noisy_test"),
        },
        "sweep": {"eps_grid": _float_list(flags.get("eps_grid"), "--eps-grid")},
        "master_seed": flags.get("master_seed"),
        "output": _path(flags.get("output")),
        "csv_output": _path(flags.get("csv_output")),
        "splits_output": _path(flags.get("splits_output")),
        "force_nonempty": flags.get("force_nonempty"),
        "softmax": flags.get("softmax"),
        "synth": {
            "n": flags.get("synth_n"),
            "k": flags.get("synth_k"),
            "seed": flags.get("synth_seed"),
        },
    }
    return load_run_config(config_path, overrides)


def _fail(kind: str, message: str, code: int) -> None:
    typer.echo(json.dumps({"error": kind, "message": message}), err=True)
    raise typer.Exit(code)


def _guarded(action: Callable[[], Any]) -> None:
    try:
        action()
    except NoisyCPError as exc:
        LOGGER.debug("command failed: %s", exc)
        _fail(exc.kind, str(exc), exc.exit_code)
    except (typer.Exit, typer.Abort):
        raise
    except Exception as exc:  # pylint: disable=broad-except
        LOGGER.exception("Unexpected failure: %s", exc)
        _fail("runtime", str(exc), EXIT_RUNTIME)


def _version(value: bool) -> None:
    if value:
        typer.echo(f"noisycp {__version__}")
        raise typer.Exit(EXIT_OK)


@app.callback()
def root(
    version: Annotated[
        bool,
        typer.Option("--version", callback=_version, is_eager=True, help="Print the version and exit."),
    ] = False,
) -> None:
    """Noise-robust conformal prediction."""


# ── Subcommands ───────────────────────────────────────────────────────────────

@app.command()
def calibrate(
    config: ConfigOpt = None,
    dataset: DatasetOpt = None,
    method: Annotated[Optional[str], typer.Option("--method", help="Method to calibrate (default NR_CP).")] = None,
    alpha: AlphaOpt = None,
    epsilon: EpsilonOpt = None,
    score: ScoreOpt = None,
    raps_a: RapsAOpt = None,
    raps_b: RapsBOpt = None,
    randomized: RandomizedOpt = None,
    master_seed: SeedOpt = None,
    output: OutputOpt = None,
    softmax: SoftmaxOpt = None,
    synth_n: SynthNOpt = None,
    synth_k: SynthKOpt = None,
    synth_seed: SynthSeedOpt = None,
) -> None:
    """Calibrate a threshold on a (noisily) labeled pool and write it as JSON."""
    flags = dict(locals())
    flags.pop("config")
    chosen = flags.pop("method")
    _guarded(lambda: commands.cmd_calibrate(_resolve(config, **flags), chosen))


@app.command()
def predict(
    calibration: Annotated[Path, typer.Option("--calibration", help="Calibration JSON from `calibrate`.")],
    dataset: Annotated[Path, typer.Option("--dataset", "-d", help="CSV dataset to predict on.")],
    test_seed: Annotated[int, typer.Option("--test-seed", help="Seed for randomized test draws.")] = 0,
    output: OutputOpt = None,
    softmax: Annotated[bool, typer.Option("--softmax/--no-softmax", help="Treat dataset columns as logits.")] = False,
    force_nonempty: Annotated[bool, typer.Option("--force-nonempty/--allow-empty")] = False,
) -> None:
    """Emit one prediction set per dataset row."""
    _guarded(
        lambda: commands.cmd_predict(
            calibration, dataset, test_seed, _path(output), softmax, force_nonempty
        )
    )


@app.command()
def experiment(
    config: ConfigOpt = None,
    dataset: DatasetOpt = None,
    alpha: AlphaOpt = None,
    epsilon: EpsilonOpt = None,
    score: ScoreOpt = None,
    raps_a: RapsAOpt = None,
    raps_b: RapsBOpt = None,
    randomized: RandomizedOpt = None,
    methods: MethodsOpt = None,
    n_splits: SplitsOpt = None,
    calib_fraction: FractionOpt = None,
    resample_noise: ResampleOpt = None,
    noisy_test: NoisyTestOpt = None,
    master_seed: SeedOpt = None,
    output: OutputOpt = None,
    csv_output: CsvOpt = None,
    splits_output: SplitTableOpt = None,
    force_nonempty: NonEmptyOpt = None,
    softmax: SoftmaxOpt = None,
    synth_n: SynthNOpt = None,
    synth_k: SynthKOpt = None,
    synth_seed: SynthSeedOpt = None,
) -> None:
    """Repeated random-split evaluation of every configured method."""
    flags = dict(locals())
    flags.pop("config")
    _guarded(lambda: commands.cmd_experiment(_resolve(config, **flags)))


@app.command()
def sweep(
    config: ConfigOpt = None,
    dataset: DatasetOpt = None,
    eps_grid: EpsGridOpt = None,
    alpha: AlphaOpt = None,
    score: ScoreOpt = None,
    raps_a: RapsAOpt = None,
    raps_b: RapsBOpt = None,
    randomized: RandomizedOpt = None,
    methods: MethodsOpt = None,
    n_splits: SplitsOpt = None,
    calib_fraction: FractionOpt = None,
    resample_noise: ResampleOpt = None,
    noisy_test: NoisyTestOpt = None,
    master_seed: SeedOpt = None,
    output: OutputOpt = None,
    csv_output: CsvOpt = None,
    force_nonempty: NonEmptyOpt = None,
    softmax: SoftmaxOpt = None,
    synth_n: SynthNOpt = None,
    synth_k: SynthKOpt = None,
    synth_seed: SynthSeedOpt = None,
) -> None:
    """One experiment per noise level in the grid."""
    flags = dict(locals())
    flags.pop("config")
    _guarded(lambda: commands.cmd_sweep(_resolve(config, **flags)))


@app.command()
def synth(
    output: Annotated[Path, typer.Option("--output", "-o", help="Dataset file to write.")],
    config: ConfigOpt = None,
    synth_n: SynthNOpt = None,
    synth_k: SynthKOpt = None,
    synth_seed: SynthSeedOpt = None,
    concentration: Annotated[Optional[float], typer.Option("--concentration", help="Dirichlet concentration.")] = None,
    temperature: Annotated[Optional[float], typer.Option("--temperature", help="Model temperature.")] = None,
    swap_top2_rate: Annotated[Optional[float], typer.Option("--swap-top2-rate", help="Share of rows with top-2 swapped.")] = None,
    epsilon: Annotated[Optional[float], typer.Option("--epsilon", "--eps", help="Pre-corrupt the label column.")] = None,
) -> None:
    """Generate a synthetic pool in the dataset format."""

    def action() -> None:
        resolved = load_run_config(
            config,
            {
                "output": str(output),
                "synth": {
                    "n": synth_n,
                    "k": synth_k,
                    "seed": synth_seed,
                    "concentration": concentration,
                    "temperature": temperature,
                    "swap_top2_rate": swap_top2_rate,
                },
            },
        )
        commands.cmd_synth(resolved, epsilon)

    _guarded(action)


def _is_usage_error(exc: Exception) -> bool:
    """Parser errors from typer's command layer carry an exit code and a formatted message."""
    return callable(getattr(exc, "format_message", None)) and isinstance(getattr(exc, "exit_code", None), int)


def main(argv: Optional[List[str]] = None) -> int:
    """Console entrypoint; usage errors map to the validation exit code."""
    try:
        result = app(args=argv, prog_name="noisycp", standalone_mode=False)
    except typer.Abort:
        return EXIT_RUNTIME
    except Exception as exc:  # pylint: disable=broad-except
        if not _is_usage_error(exc):
            raise
        typer.echo(json.dumps({"error": "usage", "message": exc.format_message()}), err=True)
        return EXIT_VALIDATION
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
