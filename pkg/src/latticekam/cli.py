"""Command-line front end driven by TOML experiment files.

Every output file gets a ``<name>.meta.json`` sidecar holding the config
hash, grid, model and tolerances.  Nothing time- or path-dependent is
written, so repeated runs with the same config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io
from .errors import (
    CflViolation,
    ConfigError,
    InadmissibleStepSize,
    InvalidArgument,
    LatticeKamError,
    ModelNotTonelli,
    NoConvergence,
    NumericFailure,
    SlopeBoundExceeded,
)
from .grid import Parity, ScalarField, build_grid, random_field
from .hj import semiconcavity_monitor, solve_ivp
from .mather import aubry_set, mather_measure, rotation_vector
from .models import builtin_model, compute_bounds, validate_step_sizes
from .weakkam import default_c_axes, effective_surface, find_periodic_solution, scaling_study

log = logging.getLogger("latticekam")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CFL = 3
EXIT_INADMISSIBLE = 4
EXIT_NUMERIC = 5
EXIT_STRICT = 6

DEFAULT_TOL = {"fixed_point": 1e-10, "identity": 1e-8, "defect": 1e-6}
_MISSING = object()


class StrictFailure(LatticeKamError):
    pass


# --------------------------------------------------------------------------
# config access
# --------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "config") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}", "config") from None


def _get(cfg: dict, path: str, kind=None, default=_MISSING):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if default is _MISSING:
                raise ConfigError("required field is missing", path)
            return default
        node = node[key]
    if kind is not None:
        try:
            if kind is int and (isinstance(node, bool) or float(node) != int(node)):
                raise ValueError
            node = kind(node)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {kind.__name__}, got {node!r}", path) from None
    return node


def _model(cfg: dict):
    name = _get(cfg, "model.name", str)
    params = {k: v for k, v in cfg["model"].items() if k not in ("name", "d")}
    d = _get(cfg, "model.d", int, None)
    if d is None and "grid" in cfg and "d" in cfg["grid"]:
        d = _get(cfg, "grid.d", int)
    try:
        return builtin_model(name, d=d, **params)
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(str(exc), "model") from None


def _grid(cfg: dict, prefix: str = "grid"):
    d = _get(cfg, f"{prefix}.d", int)
    N = _get(cfg, f"{prefix}.N", int)
    K = _get(cfg, f"{prefix}.K", int)
    try:
        return build_grid(d, N, K)
    except InvalidArgument as exc:
        raise ConfigError(str(exc), prefix) from None


def _bounds(cfg: dict, model):
    if "bounds" not in cfg:
        return None
    r = _get(cfg, "bounds.r", float)
    P = _get(cfg, "bounds.P", default=2.0)
    lam1 = _get(cfg, "bounds.lambda1", float, None)
    try:
        return compute_bounds(model, r, P if np.isscalar(P) else tuple(P), lambda1=lam1)
    except InvalidArgument as exc:
        raise ConfigError(str(exc), "bounds") from None


def _tolerances(cfg: dict) -> dict:
    tol = dict(DEFAULT_TOL)
    for k in tol:
        tol[k] = _get(cfg, f"tolerances.{k}", float, tol[k])
    return tol


def _c_list(cfg: dict, path: str, d: int) -> list[np.ndarray]:
    raw = _get(cfg, path)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d == 1 else arr.reshape(1, -1)
    if arr.shape[1] != d:
        raise ConfigError(f"each c needs {d} components", path)
    return list(arr)


def _seed(cfg: dict, args, path: str):
    if args.seed is not None:
        return int(args.seed)
    seed = _get(cfg, path, int, None)
    if seed is None:
        raise ConfigError("random initial data needs a seed (config or --seed)", path)
    return seed


def _initial_field(cfg: dict, args, grid, bounds):
    kind = _get(cfg, "v0.kind", str, "zero")
    if kind == "zero":
        return ScalarField.constant(grid, Parity.ODD)
    if kind == "random":
        seed = _seed(cfg, args, "v0.seed")
        default = bounds.r if bounds is not None else 1.0
        slope = _get(cfg, "v0.slope", float, default)
        if bounds is not None and slope > bounds.r:
            raise ConfigError(f"slope {slope} exceeds r = {bounds.r}", "v0.slope")
        return random_field(grid, Parity.ODD, np.random.default_rng(seed), slope)
    if kind == "file":
        path = _get(cfg, "v0.path", str)
        try:
            return io.read_field(path, grid, Parity.ODD)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read initial field: {exc}", "v0.path") from None
    raise ConfigError(f"unknown kind {kind!r}", "v0.kind")


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


class _Writer:
    def __init__(self, out: Path, cfg: dict, grid, model, tol: dict, command: str):
        self.out = out
        self.meta = {
            "command": command,
            "config_hash": io.config_hash(cfg),
            "grid": {"d": grid.d, "N": grid.N, "K": grid.K, "h": grid.h, "tau": grid.tau, "lam": grid.lam},
            "model": {"name": model.name, "params": getattr(model, "params", {})},
            "tolerances": tol,
        }
        self.files: list[Path] = []

    def _sidecar(self, path: Path):
        io.write_json(path.with_name(path.name + ".meta.json"), dict(self.meta, file=path.name))
        self.files.append(path)

    def csv(self, name: str, header, rows) -> Path:
        p = io.write_csv(self.out / name, header, rows)
        self._sidecar(p)
        return p

    def json(self, name: str, obj) -> Path:
        p = io.write_json(self.out / name, obj)
        self._sidecar(p)
        return p

    def adopt(self, paths):
        for p in paths:
            self._sidecar(Path(p))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_solve(cfg: dict, args) -> int:
    model = _model(cfg)
    grid = _grid(cfg)
    bounds = _bounds(cfg, model)
    tol = _tolerances(cfg)
    c = _c_list(cfg, "c", grid.d)[0]
    steps = _get(cfg, "steps", int, grid.period_steps)
    v0 = _initial_field(cfg, args, grid, bounds)
    sol = solve_ivp(v0, steps, c, model, bounds, force=args.force)
    w = _Writer(_out_dir(args), cfg, grid, model, tol, "solve")
    w.adopt(sol.export(w.out, "solve"))
    report = {"final_min": float(sol.final.sub.min()), "final_max": float(sol.final.sub.max())}
    if bounds is not None:
        sc = semiconcavity_monitor(sol, bounds)
        report["step_sizes"] = validate_step_sizes(bounds, grid).as_dict()
        report["semiconcavity"] = {
            "ok": sc.ok,
            "guaranteed": sc.guaranteed,
            "violations": sc.violations.tolist(),
            "M_plus": sc.M_plus,
        }
        report["bounds"] = bounds.as_dict()
    w.json("solve_report.json", report)
    print(f"solve: {steps} steps, final range [{report['final_min']:.6g}, {report['final_max']:.6g}]")
    return EXIT_OK


def _surface_axes(cfg: dict, grid, bounds):
    if "effective" in cfg and "c_axes" in cfg["effective"]:
        axes = _get(cfg, "effective.c_axes")
        if len(axes) != grid.d:
            raise ConfigError(f"need {grid.d} c axes", "effective.c_axes")
        return [np.asarray(ax, dtype=float) for ax in axes]
    n = _get(cfg, "effective.n", int, 17)
    P = bounds.P if bounds is not None else _get(cfg, "effective.P", default=2.0)
    if isinstance(P, list):
        P = tuple(P)
    return default_c_axes(grid.d, P, n)


def cmd_effective(cfg: dict, args) -> int:
    model = _model(cfg)
    grid = _grid(cfg)
    bounds = _bounds(cfg, model)
    tol = _tolerances(cfg)
    axes = _surface_axes(cfg, grid, bounds)
    w = _Writer(_out_dir(args), cfg, grid, model, tol, "effective")
    if args.action == "verify":
        return _verify(cfg, args, model, grid, bounds, tol, axes, w)
    forward = bool(_get(cfg, "effective.forward", default=False))
    try:
        surf = effective_surface(
            model, grid, axes, bounds, tol["fixed_point"], forward=forward, threads=args.threads, force=args.force
        )
    except InvalidArgument as exc:
        raise ConfigError(str(exc), "effective") from None
    w.csv("effective_surface.csv", surf.columns(), surf.rows())
    conv = surf.convexity(tol["identity"])
    w.json(
        "effective_report.json",
        {
            "holes": surf.holes,
            "convexity": {"ok": conv.ok, "min_margin": conv.min_margin, "triples": conv.n_triples},
            "max_bracket_width": float(np.nanmax(surf.widths)),
        },
    )
    print(f"effective: {surf.values.size} points, {surf.holes} holes, convex={conv.ok}")
    if args.strict and (surf.holes or not conv.ok):
        raise StrictFailure(f"{surf.holes} holes, convex={conv.ok}")
    return EXIT_OK


def _verify(cfg, args, model, grid, bounds, tol, axes, w) -> int:
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    rows = []
    failures = 0
    for c in pts:
        try:
            sol = find_periodic_solution(c, model, grid, bounds, tol["fixed_point"], force=args.force)
            gap = abs(sol.Hbar - sol.hamiltonian_average(model))
            ok = sol.converged and gap <= tol["identity"]
            rows.append(list(c) + [sol.Hbar, sol.hamiltonian_average(model), gap, int(ok)])
        except (NoConvergence, CflViolation):
            ok = False
            rows.append(list(c) + [np.nan, np.nan, np.nan, 0])
        failures += not ok
    cols = [f"c{j + 1}" for j in range(grid.d)] + ["Hbar", "hamiltonian_average", "identity_gap", "ok"]
    w.csv("effective_verify.csv", cols, rows)
    worst = max((r[-2] for r in rows if np.isfinite(r[-2])), default=np.nan)
    w.json("effective_verify.json", {"max_identity_gap": worst, "failures": failures})
    print(f"verify: max identity residual {worst:.3e}, {failures} failures")
    if args.strict and failures:
        raise StrictFailure(f"{failures} c values failed verification")
    return EXIT_OK


def cmd_mather(cfg: dict, args) -> int:
    model = _model(cfg)
    grid = _grid(cfg)
    bounds = _bounds(cfg, model)
    tol = _tolerances(cfg)
    cs = _c_list(cfg, "mather.c", grid.d)
    doublings = _get(cfg, "mather.max_doublings", int, 24)
    periods = _get(cfg, "mather.rotation_periods", int, 2**16)
    n_extra = _get(cfg, "mather.extra_solutions", int, 0)
    fd = _get(cfg, "mather.fd_step", float, None)
    rng = np.random.default_rng(_seed(cfg, args, "mather.seed")) if n_extra else None
    w = _Writer(_out_dir(args), cfg, grid, model, tol, "mather")
    summary = []
    for i, c in enumerate(cs):
        sol = find_periodic_solution(c, model, grid, bounds, tol["fixed_point"], force=args.force)
        sols = [sol]
        for _ in range(n_extra):
            v0 = random_field(grid, Parity.ODD, rng, bounds.r if bounds is not None else 1.0)
            sols.append(find_periodic_solution(c, model, grid, bounds, tol["fixed_point"], v0=v0, force=args.force))
        ma = mather_measure(c, sol, model, tol=tol["defect"], max_doublings=doublings)
        surface = None
        if fd is not None:
            axes = [np.array([cj - fd, cj, cj + fd]) for cj in c]
            surface = effective_surface(model, grid, axes, None, tol["fixed_point"], threads=args.threads)
        rot = rotation_vector(c, sol, model, periods, surface=surface)
        aub = aubry_set(c, sols, model, tol["defect"])
        inside, worst, outside = aub.contains(ma.measure)
        w.csv(f"mather_{i}_measure.csv", ma.measure.columns(), ma.measure.rows())
        w.csv(f"mather_{i}_aubry.csv", aub.columns(), aub.rows())
        entry = ma.summary()
        entry["rotation"] = {
            "drift": rot.drift.tolist(),
            "ratio": rot.ratio.tolist(),
            "levels": rot.horizon,
            "fd_gradient": None if rot.gradient is None else rot.gradient.tolist(),
            "error": rot.error,
        }
        entry["aubry"] = {"contains_support": inside, "worst_mismatch": worst, "outside": outside}
        summary.append(entry)
        print(f"mather c={c.tolist()}: defect {ma.defect:.3e}, partial={ma.partial}, rotation {rot.drift.tolist()}")
    w.json("mather_summary.json", summary)
    if args.strict and any(e["partial"] or not e["aubry"]["contains_support"] for e in summary):
        raise StrictFailure("partial Mather defect or Aubry containment failure")
    return EXIT_OK


def cmd_convergence(cfg: dict, args) -> int:
    model = _model(cfg)
    tol = _tolerances(cfg)
    entries = _get(cfg, "convergence.grids")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("grid list is empty", "convergence.grids")
    d = _get(cfg, "convergence.d", int, model.d)
    try:
        grids = [build_grid(d, int(N), int(K)) for N, K in entries]
    except (TypeError, ValueError, InvalidArgument) as exc:
        raise ConfigError(f"bad grid entry: {exc}", "convergence.grids") from None
    c = _c_list(cfg, "convergence.c", d)[0]
    rep = scaling_study(model, c, grids, tol["fixed_point"])
    w = _Writer(_out_dir(args), cfg, grids[-1], model, tol, "convergence")
    w.csv("convergence.csv", rep.columns(), rep.rows())
    w.json(
        "convergence.json",
        {"kind": rep.kind, "slope": rep.slope, "monotone": rep.monotone, "errors": rep.errors.tolist()},
    )
    print(f"convergence: slope {rep.slope}, monotone={rep.monotone}")
    if args.strict and not rep.monotone:
        raise StrictFailure("errors are not monotone")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "effective": cmd_effective, "mather": cmd_mather, "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for random initial data (overrides the config)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--strict", action="store_true", help="nonzero exit on any failed point")
    common.add_argument("--force", action="store_true", help="run despite inadmissible step sizes")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="latticekam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="iterate the scheme from initial data")
    eff = sub.add_parser("effective", parents=[common], help="effective Hamiltonian surface")
    eff.add_argument("action", nargs="?", choices=["run", "verify"], default="run")
    sub.add_parser("mather", parents=[common], help="Mather measures, rotation vectors, Aubry sets")
    sub.add_parser("convergence", parents=[common], help="grid refinement study")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelNotTonelli) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CflViolation as exc:
        print(f"CFL violation: {exc}", file=sys.stderr)
        return EXIT_CFL
    except (InadmissibleStepSize, SlopeBoundExceeded) as exc:
        print(f"inadmissible: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except StrictFailure as exc:
        print(f"strict: {exc}", file=sys.stderr)
        return EXIT_STRICT
    except (NumericFailure, NoConvergence) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
