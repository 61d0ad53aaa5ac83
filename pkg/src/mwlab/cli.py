"""Config-driven experiment runner.

    mwlab <subcommand> --config run.ini [--out DIR]

Each run writes ``DIR/<subcommand>.csv`` (header row, one record per line)
and ``DIR/<subcommand>.json`` echoing the parsed config, the seed and the
package version.  Numeric failures become flagged rows (``status`` column)
rather than crashes; config errors exit with status 2 and name the field.
"""
from __future__ import annotations

import os

_threads = os.environ.get("MWLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import configparser
import json
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, adop, diagnostics, phitransform as pt, seqspaces as ss
from .dyadic import CubeIndex, CubeWindow
from .weights import MatrixWeightSpec, Quadrature, QuadratureNotConverged, ReducingFamily, verify_reducing

NUMERIC_FAILURES = (diagnostics.GridTooCoarse, QuadratureNotConverged, pt.ContractionError,
                    FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive: grid N differs from grid n
    return parser


class Config:
    """Typed access to an INI file; every error names ``[section] key``."""

    def __init__(self, parser: configparser.ConfigParser, path: Path | None = None):
        self.parser = parser
        self.path = path
        self.used: dict = {}

    @classmethod
    def from_file(cls, path) -> "Config":
        path = Path(path)
        parser = _parser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(parser, path)

    @classmethod
    def from_string(cls, text: str) -> "Config":
        parser = _parser()
        parser.read_string(text)
        return cls(parser)

    def _raw(self, section, key, default):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if default is _REQUIRED:
            raise ConfigError(f"[{section}] {key}: missing required field")
        return default

    def get(self, section: str, key: str, conv: Callable = str, default=None):
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            val = raw
        else:
            try:
                val = conv(raw.strip())
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc
        self.used.setdefault(section, {})[key] = val
        return val

    def floats(self, section, key, default=None) -> list | None:
        return self.get(section, key, _float_list, default)

    def echo(self) -> dict:
        out = {s: dict(self.parser.items(s)) for s in self.parser.sections()}
        return {"sections": out, "resolved": self.used}


_REQUIRED = object()


def _float(s: str) -> float:
    return math.inf if s.lower() in ("inf", "infinity") else float(s)


def _float_list(s: str) -> list:
    return [_float(v) for v in s.replace(",", " ").split()]


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# ----------------------------------------------------------------------------
# common sections


def parse_weight(cfg: Config) -> MatrixWeightSpec:
    kind = cfg.get("weight", "kind", str, "identity")
    n = cfg.get("weight", "n", int, 1)
    m = cfg.get("weight", "m", int, 1)
    try:
        if kind == "identity":
            return MatrixWeightSpec.identity(n, m)
        if kind == "power":
            return MatrixWeightSpec.power(cfg.get("weight", "exponents", _float, _REQUIRED), n, m)
        if kind == "anisotropic":
            return MatrixWeightSpec.anisotropic(cfg.floats("weight", "exponents", _REQUIRED), m)
        if kind == "conjugated":
            return MatrixWeightSpec.conjugated(cfg.floats("weight", "exponents", _REQUIRED),
                                               cfg.get("weight", "angle", _float, 0.0), n)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[weight] exponents: {exc}") from exc
    raise ConfigError(f"[weight] kind: unknown weight kind {kind!r}")


def parse_space(cfg: Config) -> ss.SpaceParams:
    try:
        return ss.SpaceParams(cfg.get("space", "s", _float, 0.0), cfg.get("space", "tau", _float, 0.0),
                              cfg.get("space", "p", _float, 2.0), cfg.get("space", "q", _float, 2.0),
                              cfg.get("space", "family", str, "F"),
                              cfg.get("space", "homogeneous", _bool, True))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[space] {exc}") from exc


def parse_window(cfg: Config, n: int) -> CubeWindow:
    try:
        return CubeWindow(cfg.get("window", "n", int, n), cfg.get("window", "j_min", int, -1),
                          cfg.get("window", "j_max", int, 1), cfg.get("window", "radius", int, 1),
                          cfg.get("window", "inhomogeneous", _bool, False))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[window] {exc}") from exc


def parse_quad(cfg: Config) -> Quadrature:
    try:
        return Quadrature(cfg.get("quadrature", "scheme", str, "gauss"), cfg.get("quadrature", "order", int, 4),
                          cfg.get("quadrature", "refinement", int, 2), layers=cfg.get("quadrature", "layers", int, 20))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[quadrature] {exc}") from exc


def _cube(text: str) -> CubeIndex:
    vals = [int(v) for v in text.replace(",", " ").split()]
    if len(vals) < 2:
        raise ValueError("expected 'j k1 [k2 ...]'")
    return CubeIndex(vals[0], tuple(vals[1:]))


def _status(x) -> str:
    return "ok" if all(math.isfinite(v) for v in np.atleast_1d(x)) else "diverges"


def _failed(exc: Exception) -> str:
    return f"failed:{type(exc).__name__}"


# ----------------------------------------------------------------------------
# subcommands: each returns a list of row dicts


def cmd_constants(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    window, quad = parse_window(cfg, W.n), parse_quad(cfg)
    depth = cfg.get("constants", "grid_depth", int, 6)
    rows = []
    for p in cfg.floats("constants", "p", [1.0]):
        try:
            rep = diagnostics.constants_report(W, p, window, quad, depth)
            row = rep.row()
            row["status"] = _status(list(row.values()))
        except NUMERIC_FAILURES as exc:
            row = {"p": p, "ap": math.nan, "apinfty": math.nan, "fujii_sc": math.nan,
                   "fujii_vec": math.nan, "status": _failed(exc)}
        rows.append(row)
    return rows


def cmd_dimension(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    quad = parse_quad(cfg)
    p = cfg.get("dimension", "p", _float, 1.0)
    grid = diagnostics.default_lambda_grid(cfg.get("dimension", "lambda_max_exp", int, 8))
    rep = diagnostics.dimension_estimate(W, p, lambda_grid=grid, quad=quad)
    r_w = math.nan
    if W.m == 1 or W.is_scalar_type:
        scalar = MatrixWeightSpec(W.n, 1, W.kind, W.exponents)
        val = diagnostics.critical_index(scalar, quad=quad).value
        r_w = math.nan if val is None else val
    return [{"p": p, "d_lower_est": rep.d_lower_est, "d_upper_est": rep.d_upper_est,
             "lower_residual": rep.lower_residual, "upper_residual": rep.upper_residual,
             "lower_slope": rep.lower_slope, "upper_slope": rep.upper_slope, "r_w": r_w,
             "monotone": rep.monotone, "status": "ok"}]


def cmd_reduce(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    window, quad = parse_window(cfg, W.n), parse_quad(cfg)
    method = cfg.get("reduce", "method", str, "john")
    count = cfg.get("reduce", "cubes", int, 50)
    rows = []
    for p in cfg.floats("reduce", "p", [2.0]):
        fam = ReducingFamily(W, p, method, quad)
        for Q, _ in zip(window.cubes(), range(count)):
            try:
                lo, hi = verify_reducing(fam, Q)
                rows.append({"p": p, "method": method, "cube": str(Q), "c_lo": lo, "c_hi": hi,
                             "ratio": hi / lo, "bound": math.sqrt(W.m) if method == "john" else 1.0,
                             "status": "ok"})
            except NUMERIC_FAILURES as exc:
                rows.append({"p": p, "method": method, "cube": str(Q), "c_lo": math.nan, "c_hi": math.nan,
                             "ratio": math.nan, "bound": math.nan, "status": _failed(exc)})
    return rows


def cmd_rhi(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    window, quad = parse_window(cfg, W.n), parse_quad(cfg)
    p = cfg.get("rhi", "p", _float, 1.0)
    r_grid = cfg.floats("rhi", "r", None)
    rep = diagnostics.reverse_holder_check(W, p, window, r_grid, quad)
    return [dict(r, p=p, worst_cube=str(rep.worst_cube), status=_status([r["worst_ratio"]]))
            for r in rep.rows()]


def cmd_badset(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    quad = parse_quad(cfg)
    p = cfg.get("badset", "p", _float, 1.0)
    Q = cfg.get("badset", "cube", _cube, CubeIndex(0, (0,) * W.n))
    M_grid = cfg.floats("badset", "M", [1.0, 2.0, 4.0, 8.0])
    rep = diagnostics.bad_set_fraction(W, p, Q, M_grid, quad=quad)
    return [dict(r, cube=str(Q), p=p, status="ok") for r in rep.rows()]


def cmd_doubling(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    window, quad = parse_window(cfg, W.n), parse_quad(cfg)
    p = cfg.get("doubling", "p", _float, 1.0)
    d1 = cfg.get("doubling", "d1", _float, 0.0)
    d2 = cfg.get("doubling", "d2", _float, 0.0)
    fam = ReducingFamily(W, p, cfg.get("doubling", "method", str, "john"), quad)
    rep = diagnostics.strong_doubling_check(fam, d1, d2, window)
    return [dict(r, d1=d1, d2=d2, status=_status([r["worst_ratio"]])) for r in rep.rows()]


def _weighting(cfg: Config, W: MatrixWeightSpec, sp: ss.SpaceParams, quad: Quadrature):
    mode = cfg.get("seqnorm", "weighting", str, "none")
    if mode == "none":
        return None
    if mode == "pointwise":
        return ss.Pointwise(W, quad)
    if mode == "averaged":
        return ReducingFamily(W, sp.p, cfg.get("seqnorm", "method", str, "gram2"), quad)
    raise ConfigError(f"[seqnorm] weighting: expected none, pointwise or averaged, got {mode!r}")


def cmd_seqnorm(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    sp, window, quad = parse_space(cfg), parse_window(cfg, W.n), parse_quad(cfg)
    weighting = _weighting(cfg, W, sp, quad)
    source = cfg.get("seqnorm", "input", str, None)
    if source:
        path = Path(source)
        if not path.is_absolute() and cfg.path is not None:
            path = cfg.path.parent / path
        try:
            fields = [ss.field_from_text(path.read_text(encoding="utf-8"))]
        except (OSError, ValueError) as exc:
            raise ConfigError(f"[seqnorm] input: {exc}") from exc
    else:
        rng = np.random.default_rng(seed)
        density = cfg.get("seqnorm", "density", _float, 0.3)
        fields = [ss.random_field(window, W.m, rng, density) for _ in range(cfg.get("seqnorm", "count", int, 10))]
    rows = []
    for i, t in enumerate(fields):
        try:
            v = ss.seq_norm(t, sp, weighting)
            rows.append({"index": i, "support": len(t.cubes), "norm": v, "status": _status([v])})
        except NUMERIC_FAILURES as exc:
            rows.append({"index": i, "support": len(t.cubes), "norm": math.nan, "status": _failed(exc)})
    return rows


def cmd_equiv(cfg: Config, seed: int) -> list[dict]:
    W = parse_weight(cfg)
    sp, window, quad = parse_space(cfg), parse_window(cfg, W.n), parse_quad(cfg)
    rep = ss.equivalence_band(sp, W, window, cfg.get("equiv", "count", int, 100), seed,
                              cfg.get("equiv", "method", str, "gram2"), quad,
                              cfg.get("equiv", "density", _float, 0.3))
    row = rep.row()
    row["stable"] = rep.drift <= cfg.get("equiv", "drift_tol", _float, 0.05)
    row["status"] = _status([row["ratio_min"], row["ratio_max"]])
    return [row]


def _adop_common(cfg: Config):
    sp = parse_space(cfg)
    n = cfg.get("adop", "n", int, 1)
    d1 = cfg.get("adop", "d1", _float, 0.0)
    d2 = cfg.get("adop", "d2", _float, 0.0)
    return sp, n, d1, d2


def cmd_adop_thresholds(cfg: Config, seed: int) -> list[dict]:
    sp, n, d1, d2 = _adop_common(cfg)
    try:
        D, E, F = adop.thresholds(sp, d1, d2, n)
    except ValueError as exc:
        raise ConfigError(f"[adop] {exc}") from exc
    return [{"n": n, "s": sp.s, "tau": sp.tau, "p": sp.p, "q": sp.q, "family": sp.family,
             "d1": d1, "d2": d2, "criticality": sp.criticality, "J_tau": sp.J_tau(n),
             "J_tilde": sp.J_tilde(n, d1, d2), "s_tilde": sp.s_tilde(n, d1),
             "D_min": D, "E_min": E, "F_min": F, "status": "ok"}]


def cmd_adop_probe(cfg: Config, seed: int) -> list[dict]:
    sp, n, d1, d2 = _adop_common(cfg)
    margin = cfg.get("adop", "margin", _float, 0.1)
    k = adop.kernel_above_thresholds(sp, d1, d2, n, margin)
    window = parse_window(cfg, n)
    W = MatrixWeightSpec.power(d2, n) if d2 else None
    rep = adop.boundedness_probe(k, sp, W, window, cfg.get("adop", "batch", int, 20),
                                 cfg.get("adop", "doublings", int, 3), seed,
                                 cfg.get("adop", "method", str, "gram2"), parse_quad(cfg),
                                 cfg.get("adop", "density", _float, 0.3))
    growth = [math.nan] + list(rep.growth)
    return [dict(r, D=k.D, E=k.E, F=k.F, growth=g, status=_status([r["ratio"]]))
            for r, g in zip(rep.rows(), growth)]


def cmd_adop_sharpness(cfg: Config, seed: int) -> list[dict]:
    sp, n, d1, d2 = _adop_common(cfg)
    rows = []
    for D in cfg.floats("adop", "D", [1.0]):
        rep = adop.d_sum(D, sp.p, d2, n)
        rows.append({"sum": "D", "D": D, "p": sp.p, "d2": d2, "exponent": rep.exponent,
                     "final_partial_sum": rep.partial_sums[-1], "slope": rep.slope,
                     "classification": rep.classification, "status": "ok"})
    F_values = cfg.floats("adop", "F", None)
    if F_values:
        D_fix = cfg.get("adop", "D_fixed", _float, n / min(1.0, sp.p) + d2 / sp.p + 1.0)
        for F in F_values:
            rep = adop.f_sum(sp, adop.ADKernel(D_fix, 0.0, F), d2, n)
            rows.append({"sum": "F", "D": D_fix, "p": sp.p, "d2": d2, "exponent": rep.exponent,
                         "final_partial_sum": rep.partial_sums[-1], "slope": rep.slope,
                         "classification": rep.classification, "status": "ok"})
    return rows


def _grid_params(cfg: Config):
    n = cfg.get("grid", "n", int, 1)
    N = cfg.get("grid", "N", int, 1024 if n == 1 else 256)
    try:
        fam = pt.build_lp_family(N, n, cfg.get("grid", "j_max", int, None))
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from exc
    return n, N, fam


def cmd_calderon(cfg: Config, seed: int) -> list[dict]:
    n, N, fam = _grid_params(cfg)
    m = cfg.get("grid", "m", int, 1)
    rng = np.random.default_rng(seed)
    rows = []
    defect = fam.partition_defect()
    for i in range(cfg.get("grid", "count", int, 100)):
        f = pt.random_band_function(N, n, m, fam.band, rng)
        g = pt.random_band_function(N, n, m, fam.band, rng)
        rows.append({"index": i, "N": N, "n": n, "j_max": fam.j_max, "partition_defect": defect,
                     "calderon_error": pt.calderon_error(f, fam),
                     "adjoint_defect": pt.adjoint_defect(pt.analyze(g, fam), f, fam), "status": "ok"})
    return rows


def cmd_sampling(cfg: Config, seed: int) -> list[dict]:
    n = cfg.get("grid", "n", int, 1)
    N = cfg.get("grid", "N", int, 256)
    j = cfg.get("sampling", "j", int, 3)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(cfg.get("sampling", "count", int, 10)):
        f = pt.random_band_function(N, n, 1, pt.SAMPLING_ALPHA * 2 ** j, rng)
        y = np.zeros(n) if i == 0 else rng.random(n) * 2.0 ** -j
        rows.append({"index": i, "j": j, "offset": " ".join(f"{v:.6f}" for v in y),
                     "max_error": pt.lattice_sampling_check(f, j, y), "status": "ok"})
    return rows


def cmd_generic_sampling(cfg: Config, seed: int) -> list[dict]:
    n = cfg.get("grid", "n", int, 1)
    N = cfg.get("grid", "N", int, 256)
    j = cfg.get("sampling", "j", int, 3)
    mode = cfg.get("sampling", "points", str, "corner")
    Ns = [int(v) for v in cfg.floats("sampling", "N_values", [2, 3, 4, 5, 6])]
    rng = np.random.default_rng(seed)
    f = pt.random_band_function(N, n, 1, pt.SAMPLING_ALPHA * 2 ** j, rng)
    rows, norms = [], []
    for NN in Ns:
        try:
            pts = pt.sample_points(j, NN, n, mode, seed)
            res = pt.generic_sampling_reconstruct(f, j, NN, pts)
            norms.append(res.contraction_norm)
            rows.append({"N": NN, "points": mode, "contraction_norm": res.contraction_norm,
                         "neumann_terms": res.neumann_terms, "error": res.error, "status": "ok"})
        except (pt.ContractionError, pt.ResolutionError, ValueError) as exc:
            rows.append({"N": NN, "points": mode, "contraction_norm": math.nan, "neumann_terms": 0,
                         "error": math.nan, "status": _failed(exc)})
    ok = [(r["N"], r["contraction_norm"]) for r in rows if r["status"] == "ok"]
    rate = math.nan
    if len(ok) >= 2:
        x, y = zip(*ok)
        rate = float(2.0 ** (-np.polyfit(x, np.log2(y), 1)[0]))
    for r in rows:
        r["decay_per_N"] = rate
    return rows


COMMANDS: dict[str, Callable[[Config, int], list[dict]]] = {
    "constants": cmd_constants,
    "dimension": cmd_dimension,
    "reduce": cmd_reduce,
    "rhi": cmd_rhi,
    "badset": cmd_badset,
    "doubling": cmd_doubling,
    "seqnorm": cmd_seqnorm,
    "equiv": cmd_equiv,
    "adop-thresholds": cmd_adop_thresholds,
    "adop-probe": cmd_adop_probe,
    "adop-sharpness": cmd_adop_sharpness,
    "calderon": cmd_calderon,
    "sampling": cmd_sampling,
    "generic-sampling": cmd_generic_sampling,
}


def run(command: str, cfg: Config, out_dir) -> list[dict]:
    """Execute ``command`` and write its CSV and JSON sidecar into ``out_dir``."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    seed = cfg.get("run", "seed", int, 0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rows = COMMANDS[command](cfg, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.csv").write_text(diagnostics.rows_to_csv(rows), encoding="utf-8", newline="\n")
    sidecar = {"command": command, "version": __version__, "seed": seed,
               "threads": os.environ.get("MWLAB_THREADS"), "config": cfg.echo()}
    (out / f"{command}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n",
                                         encoding="utf-8", newline="\n")
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mwlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI file with the run parameters")
    ap.add_argument("--out", default="mwlab-out", help="output directory")
    args = ap.parse_args(argv)
    try:
        cfg = Config.from_file(args.config)
        rows = run(args.command, cfg, args.out)
    except ConfigError as exc:
        print(f"mwlab: config error: {exc}", file=sys.stderr)
        return 2
    flagged = sum(1 for r in rows if r.get("status") != "ok")
    print(f"{args.command}: {len(rows)} rows -> {Path(args.out) / (args.command + '.csv')}"
          + (f" ({flagged} flagged)" if flagged else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
