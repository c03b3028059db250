"""Batch experiment runner.

``wassreg run configs.json --out DIR`` evaluates every configuration in the
file and writes one CSV per pipeline (``bounds``, ``oracle``,
``certificate``, ``cvar``, ``solve``).  ``wassreg catalog`` lists the
supported loss and cost pairings.

Exit codes: 0 success, 1 unreadable or malformed configuration, 2 at least
one per-row failure (recorded in the ``error`` column), 3 output I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .equivalence import (
    cvar,
    empirical_loss,
    hmcr,
    lower_bound_L,
    robust_cvar,
    worst_case_distribution,
)
from .errors import ConfigParse
from .losses import CATALOG, CVAR_ABS_RESIDUAL, CVAR_MARGIN, HMCR, LossSpec, weak_lipschitz
from .oracle import json_lines_trace, make_grid, sup_over_grid
from .solver import SolveConfig, minimize_regularized
from .space import BINARY, LABELED, PLAIN, DiscreteDistribution, Point, make_distribution

PIPELINES = ("bounds", "oracle", "certificate", "cvar", "solve")
THREADS_ENV = "WASSREG_THREADS"

BOUND_COLUMNS = (
    "config_id", "family", "cost", "r", "delta", "E", "L", "U", "L_lower",
    "oracle_value", "gap", "radius", "runtime_ms", "error",
)
CVAR_COLUMNS = (
    "config_id", "family", "alpha", "delta", "cvar", "robust_cvar", "hmcr", "robust_hmcr", "runtime_ms", "error",
)
SOLVE_COLUMNS = ("config_id", "family", "cost", "r", "delta", "objective", "iterations", "beta", "runtime_ms", "error")
COLUMNS = {
    "bounds": BOUND_COLUMNS,
    "oracle": BOUND_COLUMNS,
    "certificate": BOUND_COLUMNS,
    "cvar": CVAR_COLUMNS,
    "solve": SOLVE_COLUMNS,
}

_SOLVE_KEYS = ("eta0", "max_iter", "tol", "stall", "step_rule", "target")


# ---------------------------------------------------------------------------
# seeded synthetic data


class SeededStream:
    """Deterministic uniform and Gaussian draws from PCG64 raw 64-bit output.

    Conversions are done here rather than through numpy's ``Generator`` so the
    stream depends only on the PCG64 bit sequence.
    """

    def __init__(self, seed: int) -> None:
        self._bits = np.random.PCG64(seed)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws in the open interval (0, 1)."""
        raw = self._bits.random_raw(n)
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53

    def gaussian(self, n: int) -> np.ndarray:
        """``n`` standard normal draws by the Box-Muller transform."""
        m = (n + 1) // 2
        u1, u2 = self.uniform(m), self.uniform(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([rad * np.cos(2.0 * np.pi * u2), rad * np.sin(2.0 * np.pi * u2)])
        return out[:n]


def generate_data(spec: dict) -> DiscreteDistribution:
    """Uniformly weighted synthetic data from ``{seed, n, dim, kind, variant}``.

    ``kind`` is ``uniform`` (coordinates in (0, 1)) or ``gaussian``.  Labeled
    points draw ``y`` from the same law; binary points draw ``y`` in {-1, +1}.
    """
    try:
        seed, n, dim = int(spec["seed"]), int(spec["n"]), int(spec["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParse(f"bad generator block: {exc}") from exc
    kind = spec.get("kind", "uniform")
    variant = spec.get("variant", LABELED)
    if kind not in ("uniform", "gaussian") or variant not in (PLAIN, LABELED, BINARY) or n < 1 or dim < 1:
        raise ConfigParse(f"bad generator block: {spec!r}")
    stream = SeededStream(seed)
    draw = stream.uniform if kind == "uniform" else stream.gaussian
    xs = draw(n * dim).reshape(n, dim)
    if variant == PLAIN:
        atoms = [Point.plain(x) for x in xs]
    elif variant == LABELED:
        atoms = [Point.labeled(x, y) for x, y in zip(xs, draw(n))]
    else:
        atoms = [Point.binary(x, 1.0 if u < 0.5 else -1.0) for x, u in zip(xs, stream.uniform(n))]
    return make_distribution(atoms, np.full(n, 1.0 / n))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One experiment: a loss, data, radii and the pipelines to run."""

    config_id: str
    loss: LossSpec
    data: DiscreteDistribution
    delta_grid: tuple[float, ...]
    grid_resolution: int = 8
    pipelines: tuple[str, ...] = PIPELINES
    alpha: float = 0.5
    solve: dict = field(default_factory=dict)
    data_json: Any = None

    def __post_init__(self) -> None:
        if not self.config_id:
            raise ConfigParse("config_id must be a nonempty string")
        deltas = self.delta_grid
        if any(not (d >= 0.0 and math.isfinite(d)) for d in deltas):
            raise ConfigParse(f"{self.config_id}: delta_grid values must be finite and nonnegative")
        if list(deltas) != sorted(deltas):
            raise ConfigParse(f"{self.config_id}: delta_grid must be sorted ascending")
        bad = set(self.pipelines) - set(PIPELINES)
        if bad:
            raise ConfigParse(f"{self.config_id}: unknown pipelines {sorted(bad)}")
        if self.grid_resolution < 1:
            raise ConfigParse(f"{self.config_id}: grid_resolution must be positive")

    def to_json(self) -> dict:
        return {
            "config_id": self.config_id,
            "loss": self.loss.to_json(),
            "data": self.data_json if self.data_json is not None else self.data.to_json(),
            "delta_grid": list(self.delta_grid),
            "grid_resolution": self.grid_resolution,
            "pipelines": list(self.pipelines),
            "alpha": self.alpha,
            "solve": dict(self.solve),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        try:
            data_obj = obj["data"]
            if isinstance(data_obj, dict) and "generator" in data_obj:
                data = generate_data(data_obj["generator"])
            else:
                data = DiscreteDistribution.from_json(data_obj)
            return cls(
                config_id=str(obj["config_id"]),
                loss=LossSpec.from_json(obj["loss"]),
                data=data,
                delta_grid=tuple(float(d) for d in obj["delta_grid"]),
                grid_resolution=int(obj.get("grid_resolution", 8)),
                pipelines=tuple(obj.get("pipelines", PIPELINES)),
                alpha=float(obj.get("alpha", 0.5)),
                solve=dict(obj.get("solve", {})),
                data_json=data_obj,
            )
        except ConfigParse:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigParse(f"bad configuration: {type(exc).__name__}: {exc}") from exc


def load_configs(text: str) -> list[ExperimentConfig]:
    """Parse a run file: a JSON list of configurations or ``{"configs": [...]}``.

    Raises
    ------
    ConfigParse
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"malformed JSON: {exc}") from exc
    if isinstance(obj, dict):
        obj = obj.get("configs")
    if not isinstance(obj, list) or not obj:
        raise ConfigParse("expected a nonempty list of configurations")
    configs = [ExperimentConfig.from_json(c) if isinstance(c, dict) else _not_object() for c in obj]
    ids = [c.config_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigParse("config_id values must be unique")
    return configs


def _not_object() -> ExperimentConfig:
    raise ConfigParse("each configuration must be a JSON object")


# ---------------------------------------------------------------------------
# pipelines


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, np.ndarray):
        return " ".join(format(float(x), ".17g") for x in v)
    return str(v)


def _error_text(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


@dataclass
class _ConfigOutput:
    rows: dict[str, list[dict]] = field(default_factory=lambda: {p: [] for p in PIPELINES})
    trace: list[dict] = field(default_factory=list)
    failed: bool = False


def _base_row(cfg: ExperimentConfig, delta: float) -> dict:
    return {
        "config_id": cfg.config_id,
        "family": cfg.loss.family,
        "cost": cfg.loss.cost.describe(),
        "r": cfg.loss.r,
        "delta": delta,
    }


def _bounds(cfg: ExperimentConfig, delta: float, grid: list[Point], row: dict) -> None:
    E = empirical_loss(cfg.loss, cfg.data)
    L = weak_lipschitz(cfg.loss, cfg.data.atoms).constant
    row.update(E=E, L=L, U=_upper(E, L, delta, cfg.loss.r), L_lower=lower_bound_L(cfg.loss, cfg.data, delta, grid))


def _upper(E: float, L: float, delta: float, r: float) -> float:
    if delta == 0.0:
        return E
    return E + L * delta if r == 1.0 else (E ** (1.0 / r) + L * delta) ** r


def _oracle(cfg: ExperimentConfig, delta: float, grid: list[Point], row: dict, trace) -> None:
    E = empirical_loss(cfg.loss, cfg.data)
    L = weak_lipschitz(cfg.loss, cfg.data.atoms).constant
    U = _upper(E, L, delta, cfg.loss.r)
    value = sup_over_grid(cfg.loss, cfg.data, delta, grid, trace).value
    row.update(E=E, L=L, U=U, oracle_value=value, gap=U - value)


def _certificate(cfg: ExperimentConfig, delta: float, row: dict) -> None:
    E = empirical_loss(cfg.loss, cfg.data)
    L = weak_lipschitz(cfg.loss, cfg.data.atoms).constant
    if delta == 0.0:
        # the ball is the data distribution itself
        row.update(E=E, L=L, U=E, oracle_value=E, gap=0.0, radius=0.0)
        return
    cert = worst_case_distribution(cfg.loss, cfg.data, delta)
    row.update(
        E=E, L=L, U=cert.upper_U, oracle_value=cert.achieved_value,
        gap=cert.upper_U - cert.achieved_value, radius=cert.wasserstein_radius,
    )


def _cvar(cfg: ExperimentConfig, delta: float, row: dict) -> None:
    loss = cfg.loss
    alpha = loss.alpha if loss.alpha is not None else cfg.alpha
    row.update(alpha=alpha, cvar=cvar(cfg.data, loss, alpha))
    if loss.family in (CVAR_ABS_RESIDUAL, CVAR_MARGIN):
        row["robust_cvar"] = robust_cvar(loss, cfg.data, alpha, delta)
    if loss.family == HMCR:
        row["hmcr"], row["robust_hmcr"] = hmcr(cfg.data, loss, alpha, loss.r, delta)


def _solve(cfg: ExperimentConfig, delta: float, row: dict) -> None:
    loss = cfg.loss
    params = {k: getattr(loss, k) for k in ("tau", "gamma", "tau1", "tau2", "alpha") if getattr(loss, k) is not None}
    extra = {k: cfg.solve[k] for k in _SOLVE_KEYS if k in cfg.solve}
    sc = SolveConfig(loss.family, loss.cost, delta, r=loss.r, params=params, **extra)
    beta0 = cfg.solve.get("beta0", loss.beta.tolist())
    res = minimize_regularized(sc, cfg.data, beta0)
    row.update(objective=res.objective, iterations=res.iterations, beta=np.asarray(res.beta))


def run_config(cfg: ExperimentConfig, want_trace: bool = False, timing: bool = False) -> _ConfigOutput:
    """Run every requested pipeline at every radius; failures become error rows."""
    out = _ConfigOutput()

    def trace(rec: dict) -> None:
        out.trace.append({"config_id": cfg.config_id, **rec})

    def guarded(pipeline: str, delta: float, fn: Callable[[dict], None]) -> None:
        row = _base_row(cfg, delta)
        t0 = time.perf_counter()
        try:
            fn(row)
        except Exception as exc:  # recorded per row; the run continues
            row["error"] = _error_text(exc)
            out.failed = True
        if timing:
            row["runtime_ms"] = (time.perf_counter() - t0) * 1e3
        out.rows[pipeline].append(row)

    for delta in cfg.delta_grid:
        grid_box: dict[str, Any] = {}

        def grid() -> list[Point]:
            if "grid" not in grid_box:
                grid_box["grid"] = make_grid(cfg.data, cfg.loss, delta, cfg.grid_resolution)
            return grid_box["grid"]

        if "bounds" in cfg.pipelines:
            guarded("bounds", delta, lambda row: _bounds(cfg, delta, grid(), row))
        if "oracle" in cfg.pipelines:
            guarded("oracle", delta, lambda row: _oracle(cfg, delta, grid(), row, trace if want_trace else None))
        if "certificate" in cfg.pipelines:
            guarded("certificate", delta, lambda row: _certificate(cfg, delta, row))
        if "cvar" in cfg.pipelines:
            guarded("cvar", delta, lambda row: _cvar(cfg, delta, row))
        if "solve" in cfg.pipelines:
            guarded("solve", delta, lambda row: _solve(cfg, delta, row))
    return out


def render_csv(pipeline: str, rows: Sequence[dict]) -> str:
    """CSV text for one pipeline; floats carry 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[pipeline]
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in cols])
    return buf.getvalue()


def run(config_path: str, out_dir: str, threads: int = 1, trace: bool = False, timing: bool = False) -> int:
    """Run a configuration file and write ``<pipeline>.csv`` files into ``out_dir``."""
    try:
        with open(config_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read {config_path}: {exc}", file=sys.stderr)
        return 1
    try:
        configs = load_configs(text)
    except ConfigParse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    job = lambda c: run_config(c, trace, timing)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(job, configs))
    else:
        outputs = [job(c) for c in configs]

    try:
        os.makedirs(out_dir, exist_ok=True)
        for p in PIPELINES:
            rows = [row for o in outputs for row in o.rows[p]]
            with open(os.path.join(out_dir, f"{p}.csv"), "w", encoding="utf-8", newline="") as fh:
                fh.write(render_csv(p, rows))
        if trace:
            with open(os.path.join(out_dir, "trace.jsonl"), "w", encoding="utf-8") as fh:
                emit = json_lines_trace(fh)
                for o in outputs:
                    for rec in o.trace:
                        emit(rec)
    except OSError as exc:
        print(f"error: cannot write to {out_dir}: {exc}", file=sys.stderr)
        return 3
    return 2 if any(o.failed for o in outputs) else 0


def list_catalog() -> str:
    """One line per supported pairing: family x cost, exponent range, constant, note."""
    lines = []
    for fam, cost, rng, const, note in CATALOG:
        line = f"{fam} × {cost} | {rng} | L = {const}"
        lines.append(line + (f" | {note}" if note else ""))
    return "\n".join(lines) + "\n"


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wassreg", description="Wasserstein worst-case loss experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a configuration file")
    run_p.add_argument("config")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    run_p.add_argument("--trace", action="store_true", help="write dual-search iterates to trace.jsonl")
    run_p.add_argument("--timing", action="store_true", help="fill the runtime_ms column")
    sub.add_parser("catalog", help="list supported loss and cost pairings")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "catalog":
        sys.stdout.write(list_catalog())
        return 0
    threads = args.threads if args.threads is not None else _default_threads()
    return run(args.config, args.out, max(1, threads), args.trace, args.timing)


if __name__ == "__main__":
    sys.exit(main())
