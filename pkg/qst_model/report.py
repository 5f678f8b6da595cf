from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
import json
from pathlib import Path
import time

import jsonschema
from loguru import logger
import numpy as np
import pandas as pd
import typer

from qst_model import __version__
from qst_model.config import REPORTS_DIR, SCHEMAS_DIR
from qst_model.errors import ArgumentError, MalformedFileError

app = typer.Typer()


@dataclass(frozen=True)
class RunManifest:
    """Provenance record written next to every artifact a command produces."""

    command: str
    config: dict
    seed: int | None
    artifacts: dict[str, str]
    duration_s: float
    version: str = __version__
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @classmethod
    def create(cls, command, config, seed, artifacts, duration_s) -> "RunManifest":
        return cls(command, jsonable(config), seed, dict(artifacts), float(duration_s))


def jsonable(value):
    """Convert numpy scalars/arrays, tuples and paths into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def manifest_path(artifact: Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def load_schema(name: str) -> dict:
    return json.loads((SCHEMAS_DIR / f"{name}.schema.json").read_text())


def write_json_report(report: dict, path: Path, schema: str) -> None:
    """Validate ``report`` against a shipped schema and write it as indented JSON."""
    document = jsonable(report)
    try:
        jsonschema.validate(document, load_schema(schema))
    except jsonschema.ValidationError as e:
        raise MalformedFileError(f"{schema} report does not match its schema: {e.message}") from e
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True))
    logger.info(f"Wrote {schema} to {path}")


def write_manifest(manifest: RunManifest, path: Path) -> None:
    write_json_report(asdict(manifest), path, "manifest")


def read_json_report(path: Path, schema: str) -> dict:
    try:
        document = json.loads(Path(path).read_text())
        jsonschema.validate(document, load_schema(schema))
    except (json.JSONDecodeError, jsonschema.ValidationError) as e:
        raise MalformedFileError(f"{path} is not a valid {schema} report: {e}") from e
    return document


def _svt_row(svt_table: pd.DataFrame, rank: int, tau: float, delta: float) -> pd.Series:
    cells = svt_table[
        (svt_table["rank"] == rank)
        & np.isclose(svt_table["tau"], tau)
        & np.isclose(svt_table["delta"], delta)
    ]
    if cells.empty:
        raise ArgumentError(f"SVT table has no cell for rank={rank}, tau={tau}, delta={delta}")
    return cells.iloc[0]


def merge_comparison(
    svt_table: pd.DataFrame, evals: list[dict], tau: float = 2.0, delta: float = 0.1
) -> pd.DataFrame:
    """SVT statistics beside LQST test metrics per network depth.

    Each rank gets a ``mean`` row and a ``std`` row. ``evals`` are eval reports carrying
    ``rank``, ``depth`` and a ``metrics`` block. Ranks have no spread in the SVT table, so
    their std cells are NaN. ``svt_test_rank`` is the SVT rank on the evaluated test
    states, taken from reports run with an SVT baseline.
    """
    if not evals:
        raise ArgumentError("at least one LQST evaluation report is required")
    ranks = sorted({int(e["rank"]) for e in evals})
    depths = sorted({int(e["depth"]) for e in evals})
    rows = []
    for rank in ranks:
        svt = _svt_row(svt_table, rank, tau, delta)
        by_depth = {int(e["depth"]): e["metrics"] for e in evals if int(e["rank"]) == rank}
        baselines = [
            e["svt_baseline"]["mean_rank"]
            for e in evals
            if int(e["rank"]) == rank and e.get("svt_baseline")
        ]
        for stat in ("mean", "std"):
            row = {
                "rank": rank,
                "stat": stat,
                "svt_iterations": svt[f"{stat}_iterations"],
                "svt_fidelity": svt[f"{stat}_fidelity"],
                "svt_trace_distance": svt[f"{stat}_trace_distance"],
                "svt_rank": svt.get("mean_rank", np.nan) if stat == "mean" else np.nan,
                "svt_test_rank": baselines[0] if baselines and stat == "mean" else np.nan,
            }
            for depth in depths:
                metrics = by_depth.get(depth, {})
                for metric in ("fidelity", "trace_distance", "rank"):
                    row[f"lqst_T{depth}_{metric}"] = metrics.get(f"{metric}_{stat}", np.nan)
            rows.append(row)
    return pd.DataFrame(rows)


@app.command()
def main(
    svt_path: Path = typer.Option(..., "--svt", exists=True, dir_okay=False),
    eval_paths: list[Path] = typer.Option(None, "--eval", exists=True, dir_okay=False),
    tau: float = 2.0,
    delta: float = 0.1,
    output_path: Path = typer.Option(REPORTS_DIR / "comparison.csv", "--out"),
):
    started = time.perf_counter()
    if not eval_paths:
        raise typer.BadParameter("at least one --eval report is required")
    svt_table = pd.read_csv(svt_path)
    evals = [read_json_report(p, "eval_report") for p in eval_paths]
    table = merge_comparison(svt_table, evals, tau=tau, delta=delta)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_path, index=False)
    write_manifest(
        RunManifest.create(
            "report",
            {"svt": svt_path, "eval": eval_paths, "tau": tau, "delta": delta},
            None,
            {"report": str(output_path)},
            time.perf_counter() - started,
        ),
        manifest_path(output_path),
    )
    logger.success(f"Comparison table written to {output_path}")


if __name__ == "__main__":
    app()
