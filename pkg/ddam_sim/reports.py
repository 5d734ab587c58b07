"""Report tables, metadata sidecars, per-figure plot data and seed aggregation."""

import json
import logging
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from ddam_sim.analytics import RegretReport
from ddam_sim.config import ExperimentConfig, Figure
from ddam_sim.errors import ConfigurationError, EmissionError

logger = logging.getLogger(__name__)

REPORT_FILE = "regret.csv"
PER_AGENT_FILE = "regret_per_agent.csv"
METADATA_FILE = "metadata.json"

REPORT_COLUMNS = [
    "horizon",
    "protocol",
    "static_regret",
    "dynamic_regret",
    "avg_regret",
    "pl",
    "bound",
    "self_nmse",
    "cross_nmse",
    "c_max",
    "seed",
    "steps_run",
    "avg_dynamic_regret",
    "rho",
    "y0",
    "omega",
]

FIGURE_COLUMNS: dict[Figure, list[str]] = {
    Figure.FIG3_REGRET_VS_T: ["T", "protocol", "avg_static_regret", "seed"],
    Figure.FIG4_VS_RHO: ["rho", "protocol", "static_regret", "avg_static_regret", "T", "seed"],
    Figure.FIG5_VS_Y0: ["y0", "protocol", "static_regret", "avg_static_regret", "T", "seed"],
    Figure.FIG7_PL_TRACKING: ["T", "protocol", "omega", "avg_dynamic_regret", "pl", "scaled_pl", "seed"],
    Figure.FIG8_DYNREGRET: ["T", "protocol", "omega", "avg_dynamic_regret", "seed"],
    Figure.FIG10_NMSE: ["y0", "protocol", "self_nmse", "cross_nmse", "T", "seed"],
}

# Sweep axis each figure plots against; non-horizon axes need two or more values.
FIGURE_AXIS: dict[Figure, str] = {
    Figure.FIG3_REGRET_VS_T: "horizon",
    Figure.FIG4_VS_RHO: "rho",
    Figure.FIG5_VS_Y0: "y0",
    Figure.FIG7_PL_TRACKING: "horizon",
    Figure.FIG8_DYNREGRET: "horizon",
    Figure.FIG10_NMSE: "y0",
}


def report_frame(reports: Sequence[RegretReport]) -> pd.DataFrame:
    rows = [
        {
            "horizon": r.horizon,
            "protocol": r.protocol,
            "static_regret": r.static_regret,
            "dynamic_regret": r.dynamic_regret,
            "avg_regret": r.avg_regret,
            "pl": r.pl,
            "bound": r.bound,
            "self_nmse": r.self_nmse,
            "cross_nmse": r.cross_nmse,
            "c_max": r.c_max,
            "seed": r.seed,
            "steps_run": r.steps_run,
            "avg_dynamic_regret": r.avg_dynamic_regret,
            "rho": r.sweep["rho"],
            "y0": r.sweep["y0"],
            "omega": r.sweep["omega"],
        }
        for r in reports
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def per_agent_frame(reports: Sequence[RegretReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        for n, (reg, pl) in enumerate(zip(r.per_agent_dynamic, r.per_agent_pl)):
            rows.append(
                {
                    "horizon": r.horizon,
                    "protocol": r.protocol,
                    "seed": r.seed,
                    "rho": r.sweep["rho"],
                    "y0": r.sweep["y0"],
                    "omega": r.sweep["omega"],
                    "agent": n,
                    "dynamic_regret": float(reg),
                    "pl": float(pl),
                }
            )
    return pd.DataFrame(rows)


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigurationError(f"{path} already exists; pass --force to overwrite")


def _versions() -> dict[str, str]:
    out = {}
    for dist in ("ddam-sim", "numpy", "scipy", "networkx", "pandas", "pydantic"):
        try:
            out[dist] = importlib_metadata.version(dist)
        except importlib_metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def planned_outputs(out_dir: str | Path, cfg: ExperimentConfig) -> list[Path]:
    out_dir = Path(out_dir)
    targets = [out_dir / REPORT_FILE, out_dir / METADATA_FILE]
    if cfg.output.per_agent:
        targets.append(out_dir / PER_AGENT_FILE)
    return targets + [out_dir / f"{fig.value}.csv" for fig in cfg.output.figures]


def check_outputs(out_dir: str | Path, cfg: ExperimentConfig, force: bool = False) -> None:
    """Refuse to clobber existing outputs unless forced."""
    for path in planned_outputs(out_dir, cfg):
        _guard(path, force)


def write_reports(
    reports: Sequence[RegretReport],
    out_dir: str | Path,
    cfg: ExperimentConfig,
    force: bool = False,
) -> list[Path]:
    """Write the report CSV, its metadata sidecar and any configured figure tables."""
    if not reports:
        raise EmissionError("no report rows to write")
    out_dir = Path(out_dir)
    check_outputs(out_dir, cfg, force)
    figures = {fig: plot_frame(reports, fig) for fig in cfg.output.figures}
    out_dir.mkdir(parents=True, exist_ok=True)

    report_frame(reports).to_csv(out_dir / REPORT_FILE, index=False)
    if cfg.output.per_agent:
        per_agent_frame(reports).to_csv(out_dir / PER_AGENT_FILE, index=False)
    sidecar = {
        "config_hash": cfg.config_hash(),
        "config": cfg.model_dump(mode="json"),
        "versions": _versions(),
        "prng": sorted({str(r.metadata.get("prng")) for r in reports}),
        "grad_bound_estimated": any(r.metadata.get("grad_bound_estimated") for r in reports),
        "rows": len(reports),
    }
    (out_dir / METADATA_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = [out_dir / REPORT_FILE, out_dir / METADATA_FILE]
    if cfg.output.per_agent:
        written.append(out_dir / PER_AGENT_FILE)
    for fig, frame in figures.items():
        path = out_dir / f"{fig.value}.csv"
        frame.to_csv(path, index=False)
        written.append(path)
    logger.info("wrote %s files to %s", len(written), out_dir)
    return written


def plot_frame(reports: Sequence[RegretReport], figure: Figure | str) -> pd.DataFrame:
    figure = Figure(figure)
    if not reports:
        raise EmissionError(f"{figure.value}: no report rows")
    frame = report_frame(reports)
    axis = FIGURE_AXIS[figure]
    if axis != "horizon" and frame[axis].nunique() < 2:
        raise EmissionError(f"{figure.value}: the sweep over {axis} is missing (one value only)")
    frame = frame.rename(columns={"horizon": "T", "avg_regret": "avg_static_regret"})
    frame["scaled_pl"] = (1.0 + frame["pl"]) / np.sqrt(frame["steps_run"])
    return frame[FIGURE_COLUMNS[figure]].reset_index(drop=True)


def emit_plotdata(
    reports: Sequence[RegretReport],
    figure: Figure | str,
    out_dir: str | Path,
    force: bool = False,
) -> Path:
    """One tidy CSV per figure, raw values, fixed column schema."""
    figure = Figure(figure)
    frame = plot_frame(reports, figure)
    path = Path(out_dir) / f"{figure.value}.csv"
    _guard(path, force)
    frame.to_csv(path, index=False)
    return path


def aggregate(reports: Sequence[RegretReport], value: str = "avg_regret") -> pd.DataFrame:
    """Mean and standard error across seeds per (protocol, rho, y0, horizon, omega)."""
    if not reports:
        raise EmissionError("no report rows to aggregate")
    frame = report_frame(reports)
    if value not in frame.columns:
        raise EmissionError(f"unknown report column {value!r}")
    keys = ["protocol", "rho", "y0", "horizon", "omega"]
    grouped = frame.groupby(keys, sort=False)[value]
    out = grouped.agg(mean="mean", count="count").reset_index()
    out["stderr"] = grouped.agg(lambda s: float(stats.sem(s)) if len(s) > 1 else 0.0).to_numpy()
    return out


def summary_line(r: RegretReport) -> str:
    return (
        f"{r.protocol:<13} T={r.horizon:<5} steps={r.steps_run:<5} seed={r.seed:<3} "
        f"rho={r.sweep['rho']:<5} y0={r.sweep['y0']:<5} omega={r.sweep['omega']:<5} "
        f"S-Reg/T={r.avg_regret:.6g} D-Reg/T={r.avg_dynamic_regret:.6g} bound={r.bound:.6g}"
    )
