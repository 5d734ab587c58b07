"""MCP tool server exposing experiment runs, tree design and traffic generation."""

import logging
from pathlib import Path
from typing import Annotated

from dotenv import load_dotenv
from fastmcp import FastMCP
from pydantic import Field

from ddam_sim import harness, reports, traffic
from ddam_sim.config import load_config
from ddam_sim.settings import configure_logging, output_dir

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

mcp = FastMCP("DDAM Simulator")


def run_experiment_tool(
    config_path: Annotated[str, Field(description="Path to an experiment TOML file")],
    overrides: Annotated[
        list[str] | None,
        Field(description="Dotted key=value overrides, e.g. 'sweep.seeds=0,1'"),
    ] = None,
    output_directory: Annotated[
        str | None,
        Field(description="Directory for the CSV reports; defaults to DDAM_OUTPUT_DIR"),
    ] = None,
    force: Annotated[bool, Field(description="Overwrite existing report files")] = False,
) -> dict:
    """Runs an experiment sweep and writes its regret reports as CSV.

    Every protocol listed in the config runs at every horizon, seed and sweep point.
    The rows are written to ``regret.csv`` together with a ``metadata.json`` sidecar and
    any figure tables the config asks for.

    Args:
        config_path: Experiment file to load.
        overrides: Optional key=value overrides applied before validation.
        output_directory: Where to write the reports.
        force: Whether existing reports may be replaced.

    Returns:
        dict: A dictionary containing:
            - status: 'success' or 'error'
            - message: Description of the result
            - files: Written paths (on success only)
            - summary: One line per report row (on success only)
    """
    try:
        cfg = load_config(config_path, overrides or [])
        out = Path(output_directory) if output_directory else output_dir()
        reports.check_outputs(out, cfg, force)
        rows = harness.run_experiment(cfg)
        written = reports.write_reports(rows, out, cfg, force=force)
        return {
            "status": "success",
            "message": f"Wrote {len(rows)} report rows to {out}",
            "files": [str(p) for p in written],
            "summary": [reports.summary_line(r) for r in rows],
        }
    except Exception as e:
        logger.error(e)
        return {"status": "error", "message": f"Error running experiment: {e}"}


def design_trees_tool(
    config_path: Annotated[str, Field(description="Path to an experiment TOML file")],
    overrides: Annotated[list[str] | None, Field(description="Dotted key=value overrides")] = None,
) -> dict:
    """Compares Steiner and sum-delay routing trees for the config's first world.

    Returns:
        dict: status, message, one row per (agent, method) under ``trees`` and the
        network link capacity of each design under ``c_max``.
    """
    try:
        cfg = load_config(config_path, overrides or [])
        frame, capacity = harness.tree_report(cfg)
        return {
            "status": "success",
            "message": f"Designed trees for {frame['agent'].nunique()} agents",
            "trees": frame.to_dict(orient="records"),
            "c_max": capacity,
        }
    except Exception as e:
        logger.error(e)
        return {"status": "error", "message": f"Error designing trees: {e}"}


def generate_periodic_traffic_tool(
    output_path: Annotated[str, Field(description="CSV file to write")],
    n_aps: Annotated[int, Field(description="Number of access points", ge=1)] = 2,
    days: Annotated[int, Field(description="Number of days on the 10-minute grid", ge=1)] = 1,
    seed: Annotated[int, Field(description="Random seed", ge=0)] = 0,
    noise: Annotated[float, Field(description="Lognormal noise scale", ge=0.0)] = 0.25,
    weekly: Annotated[float, Field(description="Weekly modulation depth", ge=0.0, lt=1.0)] = 0.0,
    force: Annotated[bool, Field(description="Overwrite an existing file")] = False,
) -> dict:
    """Writes periodic access-point traffic in the ap_id,timestamp,volume format."""
    try:
        path = Path(output_path)
        if path.exists() and not force:
            return {"status": "error", "message": f"{path} already exists; pass force to overwrite"}
        path.parent.mkdir(parents=True, exist_ok=True)
        records = traffic.gen_periodic_traffic(n_aps, days, seed=seed, noise=noise, weekly=weekly)
        traffic.write_traffic_csv(records, path)
        return {
            "status": "success",
            "message": f"Wrote {len(records)} traffic records to {path}",
            "rows": len(records),
        }
    except Exception as e:
        logger.error(e)
        return {"status": "error", "message": f"Error generating traffic: {e}"}


mcp.tool(run_experiment_tool)
mcp.tool(design_trees_tool)
mcp.tool(generate_periodic_traffic_tool)


if __name__ == "__main__":
    configure_logging()
    mcp.run()
