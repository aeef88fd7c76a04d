"""File formats: trajectory/curve/table CSVs, run manifests, signal bands.

Floats are written with repr so every value round-trips exactly; metrics
recomputed from an exported trajectory match the in-memory numbers bit for
bit.
"""

from __future__ import annotations

import csv
import datetime
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .ars import IterationReport
from .config import ScenarioConfig
from .traffic import SignalProgram

TRAJECTORY_HEADER = ("time_s", "vehicle_id", "class", "position_m",
                     "speed_mps", "accel_mps2", "energy_wh", "signal_phase",
                     "signal_remaining_s")

CURVE_HEADER = ("iteration", "mean_reward", "smoothed_reward", "eval_reward",
                "update_norm")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trajectories(path: Path | str, rows: Iterable[tuple]) -> None:
    """Write trajectory rows (time, id, class, position, speed, accel,
    energy, phase label, remaining) to CSV."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for row in rows:
            writer.writerow([_fmt(float(row[0])), row[1], row[2],
                             _fmt(float(row[3])), _fmt(float(row[4])),
                             _fmt(float(row[5])), _fmt(float(row[6])),
                             row[7], _fmt(float(row[8]))])


def read_trajectories(path: Path | str) -> list[tuple]:
    """Read a trajectory CSV back into typed row tuples."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected trajectory header {header}")
        for rec in reader:
            rows.append((float(rec[0]), int(rec[1]), rec[2], float(rec[3]),
                         float(rec[4]), float(rec[5]), float(rec[6]), rec[7],
                         float(rec[8])))
    return rows


def write_training_curve(path: Path | str,
                         reports: Sequence[IterationReport]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for rep in reports:
            writer.writerow([rep.iteration, _fmt(rep.mean_reward),
                             _fmt(rep.smoothed_reward), _fmt(rep.eval_reward),
                             _fmt(rep.update_norm)])


def write_table(path: Path | str, rows: Sequence[dict]) -> None:
    """Write a list of uniform dicts as CSV, columns in first-row order."""
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    columns = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def signal_bands(program: SignalProgram, t0: float, t1: float) -> list[dict]:
    """Approach signal state intervals covering [t0, t1] for plotting.

    States are green/yellow (of the approach phase) and red (everything
    else), merged into maximal constant-state bands.
    """
    if t1 <= t0:
        raise ValueError("signal band window must satisfy t0 < t1")
    bands = []
    t = t0
    while t < t1:
        sig = program.query(t)
        if sig.phase_index == program.approach_phase:
            state = "yellow" if sig.is_yellow else "green"
        else:
            state = "red"
        end = t + sig.remaining
        if end <= t:  # guard against zero-width float slivers
            end = t + 1e-9
        if bands and bands[-1]["state"] == state:
            bands[-1]["end_s"] = min(end, t1)
        else:
            bands.append({"start_s": t, "end_s": min(end, t1), "state": state})
        t = end
    return bands


def write_signal_bands(path: Path | str, bands: Sequence[dict]) -> None:
    write_table(path, bands)


def build_manifest(command: str, scenario: ScenarioConfig,
                   seeds: dict[str, object], out_dir: Path | str,
                   outputs: Sequence[str] = ()) -> dict:
    """Reproducibility manifest describing one CLI run."""
    return {
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "out_dir": str(out_dir),
        "config": scenario.to_dict(),
        "config_sha256": scenario.digest(),
        "seeds": seeds,
        "outputs": list(outputs),
    }


def write_manifest(path: Path | str, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def export_time_space_plot(trajectory_path: Path | str,
                           bands_path: Optional[Path | str],
                           out_path: Path | str,
                           lane_length: float = 500.0) -> None:
    """Render a time-space diagram from exported CSVs (needs matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_trajectories(trajectory_path)
    by_vehicle: dict[int, list[tuple]] = {}
    classes: dict[int, str] = {}
    for row in rows:
        by_vehicle.setdefault(row[1], []).append(row)
        classes[row[1]] = row[2]

    fig, ax = plt.subplots(figsize=(9, 5))
    colors = {"ego_cav": "tab:red", "platoon_hdv": "tab:blue",
              "background_hdv": "0.7"}
    for vid, vrows in sorted(by_vehicle.items()):
        vrows.sort(key=lambda r: r[0])
        times = [r[0] for r in vrows]
        positions = [r[3] for r in vrows]
        vclass = classes[vid]
        ax.plot(times, positions, color=colors.get(vclass, "0.5"),
                linewidth=1.6 if vclass == "ego_cav" else 0.9,
                zorder=3 if vclass != "background_hdv" else 2)

    if bands_path is not None:
        band_colors = {"green": "tab:green", "yellow": "gold", "red": "tab:red"}
        with Path(bands_path).open(newline="") as fh:
            for band in csv.DictReader(fh):
                ax.hlines(lane_length, float(band["start_s"]),
                          float(band["end_s"]),
                          color=band_colors[band["state"]], linewidth=4,
                          zorder=4)

    ax.set_xlabel("time [s]")
    ax.set_ylabel("position [m]")
    ax.set_title("time-space diagram")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
