"""Command-line front end.

Usage::

    spinhall <subcommand> [options]

Subcommands: ``spectrum``, ``curvature``, ``chern``, ``conductivity``,
``trajectory``, ``check``.  Exit codes: 0 success, 2 configuration error,
3 numerical-tolerance failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .berry import analytic_curvature, check_combination
from .checks import run_checks
from .errors import ConfigError, MalformedConfig, NumericalError, RegimeViolation, SpinHallError
from .model import Basis, Model, ModelParams, analytic_spectrum
from .semiclassics import integrate_trajectory
from .transport import (
    Distribution,
    QuadConfig,
    convention_record,
    default_basis,
    spin_hall_conductivity,
    spin_hall_from_current,
)

log = logging.getLogger("spinhall")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

PARAM_FIELDS = ("v_f", "delta_so", "lambda_r", "hbar", "charge", "e_field", "b_field", "fermi_energy")
TOP_FIELDS = set(PARAM_FIELDS) | {"model", "basis", "grid", "quad", "distribution", "trajectory", "output",
                                  "allow_out_of_regime"}
GRID_FIELDS = {"p_max", "points"}
QUAD_FIELDS = {f.name for f in fields(QuadConfig)}
TRAJ_FIELDS = {"band", "x0", "p0", "t_end", "tol"}


@dataclass
class GridConfig:
    p_max: float = 3.0
    points: int = 61


@dataclass
class TrajectoryConfig:
    band: str = "up-K"
    x0: tuple = (0.0, 0.0)
    p0: tuple = (0.3, 0.0)
    t_end: float = 5.0
    tol: float = 1e-8


@dataclass
class RunConfig:
    model: Model
    basis: Basis
    params: ModelParams
    grid: GridConfig = field(default_factory=GridConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    distribution: str = "unity"
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    output: str = "-"
    allow_out_of_regime: bool = False
    overrides: list = field(default_factory=list)

    def to_dict(self) -> dict:
        params = asdict(self.params)
        params["e_field"] = list(params["e_field"])
        traj = asdict(self.trajectory)
        traj["x0"], traj["p0"] = list(traj["x0"]), list(traj["p0"])
        return {
            "model": self.model.value,
            "basis": self.basis.value,
            "params": params,
            "grid": asdict(self.grid),
            "quad": {**asdict(self.quad), "p_max": self.quad.resolved_p_max(self.params)},
            "distribution": self.distribution,
            "trajectory": traj,
            "allow_out_of_regime": self.allow_out_of_regime,
            "overrides": sorted(self.overrides),
            "version": __version__,
        }

    def dist(self) -> Distribution:
        if self.distribution == "unity":
            return Distribution()
        return Distribution("fermi_zero_T", self.params.fermi_energy)


# ---------------------------------------------------------------- config


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MalformedConfig(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedConfig(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise MalformedConfig(f"{path}: top level must be a JSON object")
    return data


def _check_keys(data: dict, allowed: set, where: str):
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise MalformedConfig(f"{where}: unknown field(s) {', '.join(unknown)}")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a JSON file and flag overrides.

    ``overrides`` maps the same keys as the file (nested sections as dicts);
    entries whose value is ``None`` are ignored.  Overridden keys are recorded.
    """
    data = _read_json(path) if path else {}
    _check_keys(data, TOP_FIELDS, "config")
    for sect, allowed in (("grid", GRID_FIELDS), ("quad", QUAD_FIELDS), ("trajectory", TRAJ_FIELDS)):
        if sect in data:
            if not isinstance(data[sect], dict):
                raise MalformedConfig(f"config: field '{sect}' must be an object")
            _check_keys(data[sect], allowed, f"config.{sect}")
    applied = []
    for key, val in (overrides or {}).items():
        if isinstance(val, dict):
            sub = {k: v for k, v in val.items() if v is not None}
            if sub:
                data[key] = {**data.get(key, {}), **sub}
                applied += [f"{key}.{k}" for k in sub]
        elif val is not None:
            data[key] = val
            applied.append(key)

    try:
        pvals = {k: data[k] for k in PARAM_FIELDS if k in data}
        for k, v in pvals.items():
            if k == "e_field":
                if not (isinstance(v, (list, tuple)) and len(v) == 2):
                    raise MalformedConfig("config: field 'e_field' must be a list of two numbers")
                pvals[k] = tuple(float(x) for x in v)
            elif v is not None:
                pvals[k] = float(v)
        params = ModelParams(**pvals)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpinHallError):
            raise
        raise MalformedConfig(f"config: bad parameter value ({exc})") from exc

    try:
        model = Model(data["model"]) if "model" in data else (Model.KM_SO if params.lambda_r == 0 else Model.KM_RASHBA)
    except ValueError as exc:
        raise MalformedConfig(f"config: field 'model' must be one of km-so, km-rashba") from exc
    try:
        basis = Basis(data["basis"]) if "basis" in data else default_basis(model)
    except ValueError as exc:
        raise MalformedConfig("config: field 'basis' must be one of Phi, Psi, FW") from exc
    check_combination(model, basis, params)

    grid = GridConfig(**data.get("grid", {}))
    if not (isinstance(grid.points, int) and grid.points >= 3 and grid.points % 2 == 1):
        raise MalformedConfig("config: field 'grid.points' must be an odd integer >= 3")
    quad = QuadConfig(**data.get("quad", {}))
    if not grid.p_max > quad.p_min or not quad.resolved_p_max(params) > quad.p_min:
        raise MalformedConfig("config: p_max must exceed p_min")
    traj = TrajectoryConfig(**{k: (tuple(v) if k in ("x0", "p0") else v) for k, v in data.get("trajectory", {}).items()})
    dist = data.get("distribution", "unity")
    if dist not in ("unity", "fermi_zero_T"):
        raise MalformedConfig("config: field 'distribution' must be 'unity' or 'fermi_zero_T'")
    if dist == "fermi_zero_T" and params.fermi_energy is None:
        raise MalformedConfig("config: distribution 'fermi_zero_T' needs 'fermi_energy'")

    allow = bool(data.get("allow_out_of_regime", False))
    if not params.spin_hall_regime and not allow:
        raise RegimeViolation(
            f"delta_so = {params.delta_so:g} <= 2 lambda_r = {2 * params.lambda_r:g}; "
            "pass --allow-out-of-regime to proceed"
        )
    return RunConfig(model, basis, params, grid, quad, dist, traj, data.get("output", "-"), allow, applied)


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    return repr(float(x))


def _metadata(cfg: RunConfig, command: str) -> list[str]:
    return [
        f"# spinhall {command}",
        "# config: " + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")),
        "# convention: " + json.dumps(convention_record(), sort_keys=True, separators=(",", ":")),
    ]


def _csv_text(cfg, command, header, rows) -> str:
    buf = io.StringIO()
    for line in _metadata(cfg, command):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_text(cfg, command, payload: dict) -> str:
    payload = {**payload, "command": command, "config": cfg.to_dict(), "convention": payload.get("convention", convention_record())}
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _emit(cfg: RunConfig, text: str):
    if cfg.output in ("-", "", None):
        sys.stdout.write(text)
    else:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _grid(cfg: RunConfig) -> np.ndarray:
    ax = np.linspace(-cfg.grid.p_max, cfg.grid.p_max, cfg.grid.points)
    px, py = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([px, py], axis=-1).reshape(-1, 2)


# ---------------------------------------------------------------- subcommands


def cmd_spectrum(cfg: RunConfig) -> int:
    g = _grid(cfg)
    e = analytic_spectrum(cfg.params, g).energies
    rows = np.column_stack([g, e])
    _emit(cfg, _csv_text(cfg, "spectrum", ["px", "py", "E1", "E2", "E3", "E4"], rows))
    return EXIT_OK


def _curvature_columns(basis: Basis):
    if basis is Basis.PHI:
        names = ["G_K_11", "G_K_12", "G_K_22", "G_Kp_11", "G_Kp_12", "G_Kp_22"]
        idx = [(0, 0), (0, 1), (1, 1), (2, 2), (2, 3), (3, 3)]
        return names, idx
    from .berry import ALL_SECTORS, sector_index

    names = [f"G_{s.spin}_{s.valley.value.replace(chr(39), 'p')}" for s in ALL_SECTORS]
    idx = [(sector_index(basis, s),) * 2 for s in ALL_SECTORS]
    return names, idx


def cmd_curvature(cfg: RunConfig) -> int:
    g = _grid(cfg)
    names, idx = _curvature_columns(cfg.basis)
    out = np.full((len(g), len(idx)), np.nan)
    ok = np.hypot(g[:, 0], g[:, 1]) > cfg.quad.p_min
    gm = analytic_curvature(cfg.model, cfg.basis, cfg.params, g[ok])
    for c, (i, j) in enumerate(idx):
        out[ok, c] = gm[:, i, j].real
    _emit(cfg, _csv_text(cfg, "curvature", ["px", "py", *names], np.column_stack([g, out])))
    return EXIT_OK


def _report(cfg: RunConfig):
    return spin_hall_conductivity(cfg.params, cfg.model, cfg.basis, cfg.dist(), cfg.quad)


def cmd_chern(cfg: RunConfig) -> int:
    rep = _report(cfg).to_dict()
    _emit(cfg, _json_text(cfg, "chern", rep))
    return EXIT_OK


def cmd_conductivity(cfg: RunConfig) -> int:
    rep = _report(cfg).to_dict()
    if cfg.distribution == "unity":
        rep["sigma_sh_from_spin_current"] = spin_hall_from_current(cfg.params, cfg.model, cfg.basis)
    _emit(cfg, _json_text(cfg, "conductivity", rep))
    return EXIT_OK


def cmd_trajectory(cfg: RunConfig) -> int:
    t = cfg.trajectory
    tr = integrate_trajectory(cfg.params, cfg.model, cfg.basis, t.band, t.x0, t.p0, (0.0, t.t_end), t.tol)
    rows = np.column_stack([tr.t, tr.x, tr.p])
    text = _csv_text(cfg, "trajectory", ["t", "x1", "x2", "p1", "p2"], rows)
    stats = json.dumps(tr.integrator_stats, sort_keys=True, separators=(",", ":"))
    lines = text.split("\n")
    lines.insert(3, "# integrator_stats: " + stats)
    _emit(cfg, "\n".join(lines))
    return EXIT_OK


def cmd_check(cfg: RunConfig, modules=None) -> int:
    results = run_checks(modules)
    for r in results:
        print(r.line(), file=sys.stderr)
    payload = {
        "checks": [
            {"module": r.module, "name": r.name, "value": r.value, "tol": r.tol, "passed": r.passed} for r in results
        ],
        "passed": all(r.passed for r in results),
    }
    _emit(cfg, _json_text(cfg, "check", payload))
    return EXIT_OK if payload["passed"] else EXIT_NUMERIC


COMMANDS = {
    "spectrum": cmd_spectrum,
    "curvature": cmd_curvature,
    "chern": cmd_chern,
    "conductivity": cmd_conductivity,
    "trajectory": cmd_trajectory,
    "check": cmd_check,
}


# ---------------------------------------------------------------- argument parsing


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--model", choices=[m.value for m in Model])
    p.add_argument("--basis", choices=[b.value for b in Basis])
    p.add_argument("--v-f", type=float, dest="v_f")
    p.add_argument("--delta-so", type=float, dest="delta_so")
    p.add_argument("--lambda-r", type=float, dest="lambda_r")
    p.add_argument("--hbar", type=float)
    p.add_argument("--charge", type=float)
    p.add_argument("--e-field", type=float, nargs=2, metavar=("EX", "EY"), dest="e_field")
    p.add_argument("--b-field", type=float, dest="b_field")
    p.add_argument("--fermi-energy", type=float, dest="fermi_energy")
    p.add_argument("--distribution", choices=["unity", "fermi_zero_T"])
    p.add_argument("--grid-p-max", type=float, dest="grid_p_max", help="half-width of the momentum grid")
    p.add_argument("--points", type=int, help="grid points per axis (odd, >= 3)")
    p.add_argument("--p-min", type=float, dest="p_min", help="lower radial cutoff")
    p.add_argument("--quad-p-max", type=float, dest="quad_p_max", help="radial quadrature split point")
    p.add_argument("--allow-out-of-regime", action="store_true", default=None, dest="allow_out_of_regime")
    p.add_argument("-o", "--output", help="output path ('-' for stdout)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinhall", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    helps = {
        "spectrum": "band energies on a momentum grid (CSV)",
        "curvature": "closed-form Berry curvature per sector on a grid (CSV)",
        "chern": "per-sector Chern numbers and spin Chern number (JSON)",
        "conductivity": "spin Hall conductivity report (JSON)",
        "trajectory": "single-band wave-packet trajectory (CSV)",
        "check": "run the invariant suite; exit 3 on any failure",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "trajectory":
            p.add_argument("--band", help="sector label, e.g. up-K or down-K'")
            p.add_argument("--x0", type=float, nargs=2)
            p.add_argument("--p0", type=float, nargs=2)
            p.add_argument("--t-end", type=float, dest="t_end")
            p.add_argument("--tol", type=float)
        if name == "check":
            p.add_argument("--module", action="append", dest="modules",
                           choices=["model", "basis", "berry", "semiclassics", "transport"])
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    get = lambda k: getattr(ns, k, None)  # noqa: E731
    ov = {k: get(k) for k in ("model", "basis", *PARAM_FIELDS, "distribution", "output", "allow_out_of_regime")}
    if ov["e_field"] is not None:
        ov["e_field"] = list(ov["e_field"])
    ov["grid"] = {"p_max": get("grid_p_max"), "points": get("points")}
    ov["quad"] = {"p_min": get("p_min"), "p_max": get("quad_p_max")}
    ov["trajectory"] = {k: get(k) for k in TRAJ_FIELDS}
    for k in ("x0", "p0"):
        if ov["trajectory"][k] is not None:
            ov["trajectory"][k] = list(ov["trajectory"][k])
    return ov


def run_command(argv: list[str]) -> int:
    """Parse ``argv`` (without the program name), run the subcommand, return the exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(ns.config, _overrides(ns))
        log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        if ns.command == "check":
            return cmd_check(cfg, ns.modules)
        return COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"spinhall: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"spinhall: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
