"""Command-line interface: ``asmpose {gen,estimate,eval,report}``.

Logs go to standard error, data to files, and each command ends with one
``key=value`` summary line on standard output.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .dataset import DatasetError, PlanError, generate_dataset, load_dataset, load_plan, plan_sampling
from .meshio import MeshFormatError
from .metrics import CSV_COLUMNS, EvalRow, build_models, evaluate_estimates, rows_to_table, write_csv
from .pipeline import estimate_sequence, read_estimates, write_estimates
from .registration import RegistrationParams, load_params

logger = logging.getLogger("asmpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    command: str
    plan_path: Path | None = None
    dataset_path: Path | None = None
    params_path: Path | None = None
    estimates_path: Path | None = None
    seed: int = 0
    output_path: Path | None = None
    overlay: bool = False
    views: tuple[int, int, int] = (8, 3, 2)
    threads: int = 1
    noise: float = 0.0


def parse_views(text: str) -> tuple[int, int, int]:
    """``yaw:N,pitch:N,scale:N`` (any order, all three required)."""
    counts = {}
    for item in text.split(","):
        key, sep, value = item.partition(":")
        key = key.strip()
        if not sep or key not in ("yaw", "pitch", "scale") or key in counts:
            raise argparse.ArgumentTypeError(f"bad --views item {item!r}; expected yaw:N,pitch:N,scale:N")
        try:
            counts[key] = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad count in {item!r}") from None
        if counts[key] < 1:
            raise argparse.ArgumentTypeError(f"count must be positive in {item!r}")
    if len(counts) != 3:
        raise argparse.ArgumentTypeError("--views needs yaw, pitch and scale counts")
    return counts["yaw"], counts["pitch"], counts["scale"]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="asmpose", description="Assembly pose estimation by CAD-model registration on depth images.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="render a per-step dataset from an assembly plan")
    g.add_argument("--plan", required=True, type=Path)
    g.add_argument("--out", required=True, type=Path, help="dataset directory")
    g.add_argument("--views", type=parse_views, default=(8, 3, 2), help="yaw:N,pitch:N,scale:N (default yaw:8,pitch:3,scale:2)")
    g.add_argument("--noise", type=float, default=0.0, help="depth noise sigma in meters")

    e = sub.add_parser("estimate", help="estimate the assembly pose for every record")
    e.add_argument("--plan", required=True, type=Path)
    e.add_argument("--dataset", required=True, type=Path)
    e.add_argument("--params", type=Path, help="key = value registration parameters")
    e.add_argument("--out", required=True, type=Path, help="estimates file (JSON lines)")

    v = sub.add_parser("eval", help="score estimates against the dataset ground truth")
    v.add_argument("--plan", required=True, type=Path)
    v.add_argument("--dataset", required=True, type=Path)
    v.add_argument("--estimates", required=True, type=Path)
    v.add_argument("--out", required=True, type=Path, help="CSV file; a .txt table is written next to it")
    v.add_argument("--overlay", action="store_true", help="write one bounding-box PNG per record")

    r = sub.add_parser("report", help="print an evaluation CSV as an aligned table")
    r.add_argument("--csv", required=True, type=Path, dest="estimates")
    r.add_argument("--out", type=Path, help="also write the table here")

    for s in (g, e, v, r):
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=_positive_int, default=1)
    return p


def _config(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=ns.command,
        plan_path=getattr(ns, "plan", None),
        dataset_path=getattr(ns, "dataset", None),
        params_path=getattr(ns, "params", None),
        estimates_path=getattr(ns, "estimates", None),
        seed=ns.seed,
        output_path=getattr(ns, "out", None),
        overlay=getattr(ns, "overlay", False),
        views=getattr(ns, "views", (8, 3, 2)),
        threads=ns.threads,
        noise=getattr(ns, "noise", 0.0),
    )


def _summary(**items) -> None:
    print(" ".join(f"{k}={v}" for k, v in items.items()), flush=True)


def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise DatasetError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- commands


def cmd_gen(cfg: RunConfig) -> int:
    plan = load_plan(_require(cfg.plan_path, "plan"))
    sampling = plan_sampling(plan, *cfg.views)
    summary = generate_dataset(plan, sampling, cfg.output_path, seed=cfg.seed, depth_noise=cfg.noise, threads=cfg.threads)
    per_step = {f"step_{k:02d}": n for k, n in summary.records_per_step.items()}
    _summary(status="ok", records=summary.total, steps=len(per_step), **per_step, out=cfg.output_path)
    return EXIT_OK


def _params(cfg: RunConfig) -> RegistrationParams:
    if cfg.params_path is None:
        logger.info("no --params given; using default registration parameters")
        params = RegistrationParams()
    elif not cfg.params_path.exists():
        logger.warning("params file %s not found; using default registration parameters", cfg.params_path)
        params = RegistrationParams()
    else:
        try:
            params = load_params(cfg.params_path)
        except ValueError as exc:
            raise DatasetError(str(exc)) from None
    return replace(params, seed=cfg.seed)


def cmd_estimate(cfg: RunConfig) -> int:
    plan = load_plan(_require(cfg.plan_path, "plan"))
    ds = load_dataset(_require(cfg.dataset_path, "dataset"))
    params = _params(cfg)
    estimates = estimate_sequence(ds, plan, params=params, threads=cfg.threads)
    for step in range(1, ds.num_steps + 1):
        n = sum(1 for e in estimates if e.step_index == step)
        logger.info("step %d: %d estimates, %d failures", step, n, sum(1 for f in estimates.failures if f.step_index == step))
    write_estimates(estimates, cfg.output_path, estimates.failures)
    flagged = sum(1 for e in estimates if e.failed)
    _summary(status="ok" if estimates else "failed", estimates=len(estimates), failures=len(estimates.failures),
             flagged=flagged, out=cfg.output_path)
    return EXIT_OK if estimates else EXIT_DATA


def cmd_eval(cfg: RunConfig) -> int:
    plan = load_plan(_require(cfg.plan_path, "plan"))
    ds = load_dataset(_require(cfg.dataset_path, "dataset"))
    estimates = read_estimates(_require(cfg.estimates_path, "estimates file"), plan)
    rows = evaluate_estimates(estimates, ds, plan, build_models(plan), estimates.failures)
    out = Path(cfg.output_path)
    write_csv(rows, out)
    table = rows_to_table(rows)
    out.with_suffix(".txt").write_text(table)
    sys.stderr.write(table)
    overlays = 0
    if cfg.overlay:
        from .overlay import write_overlay

        odir = out.parent / (out.stem + "_overlay")
        odir.mkdir(parents=True, exist_ok=True)
        for e in estimates:
            rec = ds.record(e.step_index, e.image_id)
            mesh = plan.parts[plan.step(e.step_index).assembly_part].mesh
            gt = ds.assembly_ground_truth(e.step_index, e.image_id)
            write_overlay(odir / f"step_{e.step_index:02d}_{e.image_id:06d}.png", rec.depth, rec.camera, mesh, gt, e.T_w_a)
            overlays += 1
    _summary(status="ok", steps=len(rows), estimates=len(estimates), overlays=overlays, out=out)
    return EXIT_OK


def read_rows(path: Path) -> list[EvalRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise DatasetError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
        try:
            return [EvalRow(int(r["step"]), *(float(r[c]) for c in CSV_COLUMNS[1:])) for r in reader]
        except ValueError as exc:
            raise DatasetError(f"{path}: {exc}") from None


def cmd_report(cfg: RunConfig) -> int:
    rows = read_rows(_require(cfg.estimates_path, "CSV file"))
    table = rows_to_table(rows, extra=False)
    sys.stderr.write(table)
    if cfg.output_path:
        Path(cfg.output_path).write_text(table)
    _summary(status="ok", steps=len(rows))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "estimate": cmd_estimate, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _config(ns)
    try:
        return COMMANDS[cfg.command](cfg)
    except (DatasetError, PlanError, MeshFormatError, OSError) as exc:
        logger.error("%s", exc)
        _summary(status="error", kind="data")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error: %s", exc)
        _summary(status="error", kind="internal")
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
