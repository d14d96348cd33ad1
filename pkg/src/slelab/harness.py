"""Command-line experiment runner.

Configuration comes from a flat ``key=value`` file and command-line flags,
flags taking precedence.  Results are written as CSV or JSON with numbers
rounded to 12 significant digits, so every emitted value survives a
round trip through either format unchanged.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .core import DomainError, green_one_point, params_from_kappa
from .estimators import (
    HIT_RULES,
    RunConfig,
    estimate_boundary_grid,
    estimate_martingale,
    estimate_one_point_grid,
    estimate_ordered_multipoint,
    estimate_phi_tail_multi,
    estimate_two_point_family,
    one_point_target,
)

EXPERIMENTS = ("one-point", "two-point", "boundary", "martingale", "phi-tail", "multi-point", "convergence")

CSV_HEADER = (
    "experiment", "kappa", "z_re", "z_im", "w_re", "w_im", "eps", "mean", "stderr", "ci_low",
    "ci_high", "n_hits", "n_paths", "target", "ratio", "dt", "horizon", "seed", "flag",
)
_INT_FIELDS = {"n_hits", "n_paths", "seed"}
_STR_FIELDS = {"experiment", "flag"}


class ConfigError(Exception):
    """Invalid or incomplete experiment configuration (exit code 1)."""


class OutputError(Exception):
    """The result file could not be written (exit code 2)."""


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_loglog_slope(xs, ys) -> FitResult:
    """Least-squares line through ``(log x, log y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("log-log fit needs finite positive values")
    lx, ly = np.log(x), np.log(y)
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    if sxx == 0.0:
        raise ValueError("xs must not all be equal")
    slope = float(np.sum((lx - mx) * (ly - my))) / sxx
    intercept = float(my - slope * mx)
    resid = float(np.sum((ly - intercept - slope * lx) ** 2))
    tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if tot == 0.0 else min(1.0, max(0.0, 1.0 - resid / tot))
    return FitResult(slope, intercept, r2, int(x.size))


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one reproducible run.

    ``eps_grid`` means: thresholds on Upsilon (one-point, convergence),
    relative thresholds ``eps * Im`` (two-point), boundary heights ``y``
    (boundary), tail levels (phi-tail), per-point radii (multi-point) and
    is ignored by the martingale experiment, which uses ``eps_floor``.
    """

    experiment: str
    kappa: float = 8.0 / 3.0
    points: tuple = (1j,)
    eps_grid: tuple = (0.1,)
    dt: float = 1e-3
    horizon: float = 16.0
    n_paths: int = 10_000
    seed: int = 0
    output_format: str = "csv"
    output_path: str = "-"
    t_stop: float = 0.5
    eps_floor: float = 0.05
    horizon_check: bool = True
    refine: int = 10
    workers: int = 1
    hit_rule: str = "arc"

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0.0 < self.kappa < 8.0:
            raise ConfigError("kappa must lie in (0, 8)")
        for name in ("dt", "horizon", "t_stop", "eps_floor"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive")
        if self.n_paths < 1 or self.refine < 1 or self.workers < 1:
            raise ConfigError("n_paths, refine and workers must be positive integers")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.eps_grid or any(not (e > 0) for e in self.eps_grid):
            raise ConfigError("eps values must be positive")
        if any(complex(z).imag <= 0 for z in self.points):
            raise ConfigError("points must lie in the upper half-plane")
        if self.hit_rule not in HIT_RULES:
            raise ConfigError(f"hit_rule must be one of {', '.join(HIT_RULES)}")
        if self.output_format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        need = {"two-point": 2, "multi-point": 2}.get(self.experiment, 1)
        if self.experiment != "boundary" and len(self.points) < need:
            raise ConfigError(f"{self.experiment} needs at least {need} points")
        if self.experiment == "boundary" and any(e > 0.25 for e in self.eps_grid):
            raise ConfigError("boundary heights must lie in (0, 1/4]")
        if self.experiment == "phi-tail" and any(e > 1 for e in self.eps_grid):
            raise ConfigError("phi-tail levels must lie in (0, 1]")
        if self.experiment == "multi-point" and len(self.eps_grid) not in (1, len(self.points)):
            raise ConfigError("multi-point needs one eps or one eps per point")

    def run_config(self, **over) -> RunConfig:
        kw = dict(kappa=self.kappa, dt=self.dt, horizon=self.horizon, n_paths=self.n_paths,
                  seed=self.seed, horizon_check=self.horizon_check, workers=self.workers,
                  hit_rule=self.hit_rule)
        kw.update(over)
        return RunConfig(**kw)

    def echo(self) -> dict:
        d = asdict(self)
        d["points"] = [[_r12(complex(z).real), _r12(complex(z).imag)] for z in self.points]
        d["eps_grid"] = [_r12(e) for e in self.eps_grid]
        return d


def _r12(x):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return x
    return float(f"{x:.12g}")


def make_row(experiment, cfg: ExperimentConfig, *, z=None, w=None, eps=None, est=None, target=None,
             ratio=None, flag=None) -> dict:
    row = dict.fromkeys(CSV_HEADER)
    row.update(experiment=experiment, kappa=cfg.kappa, eps=eps, n_paths=cfg.n_paths, target=target,
               ratio=ratio, dt=cfg.dt, horizon=cfg.horizon, seed=cfg.seed, flag="")
    if z is not None:
        row["z_re"], row["z_im"] = complex(z).real, complex(z).imag
    if w is not None:
        row["w_re"], row["w_im"] = complex(w).real, complex(w).imag
    if est is not None:
        row.update(mean=est.mean, stderr=est.stderr, ci_low=est.ci_low, ci_high=est.ci_high,
                   n_hits=est.n_hits, n_paths=est.n_samples, flag=est.flag)
    if flag is not None:
        row["flag"] = flag
    for k in CSV_HEADER:
        if k not in _INT_FIELDS and k not in _STR_FIELDS:
            row[k] = _r12(row[k])
    for k in _INT_FIELDS:
        if row[k] is not None:
            row[k] = int(row[k])
    return row


def _safe_ratio(a, b):
    return a / b if b else None


def run_experiment(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """Run ``cfg`` and return ``(rows, extra metadata)``."""
    p = params_from_kappa(cfg.kappa)
    rc = cfg.run_config()
    rows: list[dict] = []
    meta: dict = {}
    exp = cfg.experiment
    if exp == "one-point":
        for z in cfg.points:
            for e, est in zip(cfg.eps_grid, estimate_one_point_grid(z, cfg.eps_grid, rc)):
                tgt = one_point_target(z, e, p)
                rows.append(make_row(exp, cfg, z=z, eps=e, est=est, target=tgt,
                                     ratio=est.mean / tgt))
    elif exp == "two-point":
        z, w = cfg.points[0], cfg.points[1]
        fam = [(z, w, e * complex(z).imag, e * complex(w).imag) for e in cfg.eps_grid]
        for e, res in zip(cfg.eps_grid, estimate_two_point_family(fam, rc)):
            rows.append(make_row(exp, cfg, z=z, w=w, eps=e, est=res.joint, target=res.envelope,
                                 ratio=res.ratio))
    elif exp == "boundary":
        bexp = 4.0 * p.a - 1.0
        for y, (full, cond) in zip(cfg.eps_grid, estimate_boundary_grid(cfg.eps_grid, rc)):
            tgt = y**bexp
            rows.append(make_row(exp, cfg, eps=y, est=full, target=tgt, ratio=full.mean / tgt))
            rows.append(make_row("boundary-conditional", cfg, eps=y, est=cond, target=tgt,
                                 ratio=cond.mean / tgt))
    elif exp == "martingale":
        for z in cfg.points:
            est = estimate_martingale(z, cfg.t_stop, cfg.eps_floor, rc)
            g = green_one_point(z, p)
            rows.append(make_row(exp, cfg, z=z, eps=cfg.eps_floor, est=est, target=g,
                                 ratio=est.mean / g))
    elif exp == "phi-tail":
        for z, ests in zip(cfg.points, estimate_phi_tail_multi(cfg.points, cfg.eps_grid, rc)):
            for e, est in zip(cfg.eps_grid, ests):
                rows.append(make_row(exp, cfg, z=z, eps=e, est=est, target=e, ratio=est.mean / e))
    elif exp == "multi-point":
        eps = list(cfg.eps_grid) * (len(cfg.points) if len(cfg.eps_grid) == 1 else 1)
        est = estimate_ordered_multipoint(cfg.points, eps, rc)
        rows.append(make_row(exp, cfg, z=cfg.points[0], w=cfg.points[1], eps=eps[0], est=est))
    elif exp == "convergence":
        coarse = cfg.run_config(horizon_check=False)
        fine = cfg.run_config(horizon_check=False, refine=cfg.refine)
        all_ok = True
        for z in cfg.points:
            ec = estimate_one_point_grid(z, cfg.eps_grid, coarse)
            ef = estimate_one_point_grid(z, cfg.eps_grid, fine)
            for e, a, b in zip(cfg.eps_grid, ec, ef):
                ok = abs(b.mean - a.mean) < max(a.half_width, b.half_width)
                all_ok &= ok
                rows.append(make_row(exp, cfg, z=z, eps=e, est=b, target=a.mean,
                                     ratio=_safe_ratio(b.mean, a.mean), flag="" if ok else "drift"))
        if all_ok:
            for r in rows:
                r["flag"] = "converged"
        meta["converged"] = all_ok
    return rows, meta


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.12g}"


def render(rows, fmt: str, cfg: ExperimentConfig | None = None, meta: dict | None = None) -> str:
    if not rows:
        raise ValueError("no rows to write")
    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for r in rows:
            wr.writerow([_fmt(r.get(k)) for k in CSV_HEADER])
        return buf.getvalue()
    if fmt == "json":
        doc = {
            "metadata": {
                "software": "slelab",
                "version": __version__,
                "seed": None if cfg is None else cfg.seed,
                "config": None if cfg is None else cfg.echo(),
                **(meta or {}),
            },
            "rows": [{k: r.get(k) for k in CSV_HEADER} for r in rows],
        }
        return json.dumps(doc, indent=1, allow_nan=False) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def write_output(rows, fmt: str, path: str, cfg: ExperimentConfig | None = None,
                 meta: dict | None = None) -> None:
    """Write rows as CSV or JSON to ``path`` (``-`` is standard output).

    CSV output is preceded by ``#`` comment lines echoing the resolved
    configuration.
    """
    text = render(rows, fmt, cfg, meta)
    if fmt == "csv" and cfg is not None:
        echo = json.dumps(cfg.echo(), sort_keys=True)
        head = f"# slelab {__version__}\n# config {echo}\n"
        if meta:
            head += f"# meta {json.dumps(meta, sort_keys=True)}\n"
        text = head + text
    try:
        if path == "-":
            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        raise OutputError(str(exc)) from exc


def _parse_cell(key, s):
    if key in _STR_FIELDS:
        return s
    if s == "":
        return None
    return int(s) if key in _INT_FIELDS else float(s)


def read_output(path: str) -> list[dict]:
    """Rows of a file written by :func:`write_output`, in either format."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["rows"]
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rdr = csv.DictReader(lines)
    if tuple(rdr.fieldnames or ()) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    return [{k: _parse_cell(k, r[k]) for k in CSV_HEADER} for r in rdr]


# ---------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _complex(s: str) -> complex:
    try:
        re_, im = s.split(",")
        return complex(float(re_), float(im))
    except ValueError as exc:
        raise ConfigError(f"bad point {s!r}; expected 're,im'") from exc


def _points(s: str) -> tuple:
    return tuple(_complex(p) for p in s.split(";") if p.strip())


def _floats(s: str) -> tuple:
    try:
        return tuple(float(x) for x in s.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad number list {s!r}") from exc


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {s!r}")


# key -> (converter, ExperimentConfig field)
_KEYS = {
    "experiment": (str, "experiment"),
    "kappa": (float, "kappa"),
    "z": (_complex, None),
    "w": (_complex, None),
    "points": (_points, "points"),
    "eps": (_floats, "eps_grid"),
    "dt": (float, "dt"),
    "horizon": (float, "horizon"),
    "n_paths": (int, "n_paths"),
    "seed": (int, "seed"),
    "format": (str, "output_format"),
    "out": (str, "output_path"),
    "t_stop": (float, "t_stop"),
    "eps_floor": (float, "eps_floor"),
    "horizon_check": (_bool, "horizon_check"),
    "refine": (int, "refine"),
    "workers": (int, "workers"),
    "hit_rule": (str, "hit_rule"),
}


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    out = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in _KEYS:
            raise ConfigError(f"{path}:{no}: unknown key {k!r}")
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="slelab", description="Monte Carlo experiments for chordal SLE.")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--kappa")
    ap.add_argument("--z", help="point as 're,im'")
    ap.add_argument("--w", help="second point as 're,im'")
    ap.add_argument("--points", help="points as 're,im;re,im;...'")
    ap.add_argument("--eps", help="comma-separated list")
    ap.add_argument("--dt")
    ap.add_argument("--horizon")
    ap.add_argument("--n-paths", dest="n_paths")
    ap.add_argument("--seed")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument("--out", metavar="PATH")
    ap.add_argument("--config", metavar="FILE")
    ap.add_argument("--t-stop", dest="t_stop")
    ap.add_argument("--eps-floor", dest="eps_floor")
    ap.add_argument("--horizon-check", dest="horizon_check")
    ap.add_argument("--refine")
    ap.add_argument("--workers")
    ap.add_argument("--hit-rule", dest="hit_rule", choices=HIT_RULES)
    return ap


def resolve_config(argv) -> ExperimentConfig:
    """Merge defaults, the config file and flags (flags win)."""
    ns = build_parser().parse_args(argv)
    raw = read_config_file(ns.config) if ns.config else {}
    for k in _KEYS:
        v = getattr(ns, k, None)
        if v is not None:
            raw[k] = v
    if "experiment" not in raw:
        raise ConfigError("no experiment given")
    kw = {}
    pts = []
    try:
        for k, v in raw.items():
            conv, name = _KEYS[k]
            val = conv(v)
            if name is None:
                continue
            kw[name] = val
        if "points" in kw:
            pts = list(kw.pop("points"))
        if "z" in raw:
            pts = [_complex(raw["z"])] + pts[1:] if pts else [_complex(raw["z"])]
        if "w" in raw:
            pts = pts[:1] + [_complex(raw["w"])] + pts[2:] if pts else [1j, _complex(raw["w"])]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if pts:
        kw["points"] = tuple(pts)
    return ExperimentConfig(**kw)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
    except (ConfigError, DomainError) as exc:
        print(f"slelab: config error: {exc}", file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        rows, meta = run_experiment(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"slelab: config error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    try:
        write_output(rows, cfg.output_format, cfg.output_path, cfg, meta)
    except OutputError as exc:
        print(f"slelab: cannot write output: {exc}", file=sys.stderr)
        return 2
    print(f"slelab: {cfg.experiment} finished in {wall:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
