"""Command-line drivers: ``rotnft {simulate,nft,audit,drops,hjb,sweep}``.

Every run writes into its own output directory: ``config.txt`` (the flat
``key = value`` configuration that reproduces the run), CSV tables, SVG line plots
and ``summary.txt``. Exit codes: 0 when every certificate of the run passes,
1 when one fails, 2 on usage or configuration errors.

CSV schemas (version 1)::

    process.csv  t, x1..xn, u1, u2, h
    nft.csv      t, x1..xn (reference), y1..yn (constructed), h_ref, h_nft
    sweep.csv    d, sup_distance, tau_d, derivative_l1, K
    audit.csv    assumption, observed, expected, match
    drops.csv    kind, tau0, phi, beta, passed, c_r, failed_clauses
    values.csv   x1..xn, feasible, V
"""
import argparse
import ast
import csv
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .drops import make_circle_drop, make_pointed_drop, validate_drop
from .geometry import ConfigurationError, audit_assumptions, sample_audit_points
from .hjb import GridSpec, constant_lagrangian, distance_lagrangian, value_iteration
from .nft import NFTFailure, construct_nft, sweep_nft
from .scenarios import get_scenario
from .simulate import ControlFunction, integrate, violation

CSV_SCHEMA = 1
COMMANDS = ("simulate", "nft", "audit", "drops", "hjb", "sweep")

DEFAULTS = {
    "simulate": dict(omega=2 * np.pi, scale=1.0, horizon=1.0, step=1e-3, x0=None),
    "nft": dict(omega=4 * np.pi, scale=1.0, horizon=0.5, step=1e-3, x0=None, reference="rotation", d_sweep=None),
    "audit": dict(),
    "drops": dict(tau0=2 * np.pi, phi=0.0, betas=(np.pi / 6, np.pi / 4, np.pi / 3)),
    "hjb": dict(grid=17, dt=0.1, tol=1e-3, lagrangian="distance", target=None, max_sweeps=5000),
    "sweep": dict(of="audit", vary=None),
}


# --- configuration ------------------------------------------------------------


def parse_value(text):
    """Python literal when ``text`` is one (numbers, tuples, None), else the bare string."""
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_items(text):
    """``key = value`` lines (``#`` starts a comment) as a dict of raw strings."""
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        items[k.strip()] = v
    return items


@dataclass
class RunConfig:
    command: str
    scenario: str = "brockett_flat"
    scenario_params: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "runs"

    def get(self, key):
        if key in self.params:
            return self.params[key]
        return DEFAULTS[self.command].get(key)

    def to_text(self):
        lines = [f"# rotnft {__version__}", f"command = {self.command}", f"scenario = {self.scenario}",
                 f"seed = {self.seed}", f"out = {self.out}"]
        lines += [f"scenario.{k} = {v!r}" for k, v in sorted(self.scenario_params.items())]
        lines += [f"{k} = {v!r}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, **overrides):
        items = read_items(text)
        items.update(overrides)
        return cls.from_items(items)

    @classmethod
    def from_items(cls, items):
        base = {f.name for f in fields(cls)} - {"scenario_params", "params"}
        kw, sp, pp = {}, {}, {}
        for k, v in items.items():
            v = parse_value(v) if isinstance(v, str) else v
            if k.startswith("scenario."):
                sp[k[len("scenario."):]] = v
            elif k in base:
                kw[k] = str(v) if k in ("command", "scenario", "out") else v
            else:
                pp[k.replace("-", "_")] = v
        if "command" not in kw:
            raise ConfigurationError("config has no command")
        if kw["command"] not in COMMANDS:
            raise ConfigurationError(f"unknown command {kw['command']!r}; available: {', '.join(COMMANDS)}")
        unknown = set(pp) - set(DEFAULTS[kw["command"]])
        if unknown:
            raise ConfigurationError(f"unknown parameters for {kw['command']}: {', '.join(sorted(unknown))}")
        return cls(scenario_params=sp, params=pp, **kw)


# --- outputs ------------------------------------------------------------------


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def svg_polyline(path, series, title="", xlabel="", ylabel="", logx=False, logy=False, size=(640, 400)):
    """Minimal SVG line chart; ``series`` is a list of ``(x, y, label)``."""
    width, height = size
    pad = 50
    tx = (lambda v: np.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: np.log10(v)) if logy else (lambda v: v)
    data = []
    for x, y, label in series:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True) & ((y > 0) if logy else True)
        data.append((tx(x[ok]), ty(y[ok]), label))
    xs = np.concatenate([d[0] for d in data]) if data else np.zeros(1)
    ys = np.concatenate([d[1] for d in data]) if data else np.zeros(1)
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda v: height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           'fill="none" stroke="#888"/>',
           f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">'
           f'{_esc(xlabel)}{" (log10)" if logx else ""}</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{_esc(ylabel)}{" (log10)" if logy else ""}</text>',
           f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:.4g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:.4g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{pad - 4}" y="{pad + 10}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    for k, (x, y, label) in enumerate(data):
        c = colors[k % len(colors)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - pad - 4}" y="{pad + 14 + 14 * k}" font-size="11" fill="{c}" '
                   f'text-anchor="end">{_esc(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray):
        return repr(v.tolist())
    return str(v)


def write_summary(path, items):
    lines = [f"{k} = {_fmt(v)}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n")
    return lines


# --- drivers ------------------------------------------------------------------


def _rotation_control(scale, omega, horizon):
    return ControlFunction.single(lambda t: scale * np.stack([np.cos(omega * t), np.sin(omega * t)], axis=-1),
                                  horizon, 2 * np.pi / abs(omega), "reference")


def _x0(cfg, dim):
    x0 = cfg.get("x0")
    return np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float).reshape(dim)


def _rotation_reference(sc, cfg, scale):
    return integrate(sc.system, _rotation_control(scale, cfg.get("omega"), cfg.get("horizon")),
                     _x0(cfg, sc.system.dim), step=cfg.get("step"))


def run_simulate(sc, cfg, out):
    proc = _rotation_reference(sc, cfg, cfg.get("scale"))
    rep = violation(proc, sc.constraint)
    proc.write_csv(out / "process.csv", sc.constraint)
    svg_polyline(out / "h.svg", [(proc.t, proc.h_values(sc.constraint), "h(x(t))")], f"{sc.name}: constraint",
                 "t", "h")
    return 0, [("feasible", rep.feasible), ("d", rep.d), ("tau1", rep.tau1),
               ("x_final", list(map(float, proc.x[-1])))]


def reference_for_violation(sc, cfg, d):
    """Rotation reference whose maximal violation is ``d`` (scale found by root finding)."""
    d1 = violation(_rotation_reference(sc, cfg, 1.0), sc.constraint).d
    if d1 <= 0 or d > d1:
        raise ConfigurationError(f"violation {d:g} out of reach of the rotation family (max {d1:g})")
    f = lambda s: violation(_rotation_reference(sc, cfg, s), sc.constraint).d - d
    guess = min(np.sqrt(d / d1), 1.0)
    lo, hi = guess / 4, min(4 * guess, 1.0)
    if abs(f(guess)) <= 1e-12 * d:
        s = guess
    else:
        s = brentq(f, lo, hi, xtol=1e-14, rtol=1e-13)
    return _rotation_reference(sc, cfg, s)


def _nft_rows(res, sc):
    y, ref = res.y, res.reference
    t = np.union1d(y.t, ref.t)
    ys = np.array([y.state_at(s) for s in t])
    rs = np.array([ref.state_at(s) for s in t])
    hy, hr = sc.constraint.value(ys), sc.constraint.value(rs)
    return t, rs, ys, hr, hy


def run_nft(sc, cfg, out):
    if cfg.get("reference") != "rotation":
        raise ConfigurationError(f"unknown reference {cfg.get('reference')!r}; available: rotation")
    sweep_arg = cfg.get("d_sweep")
    if sweep_arg is None:
        ref = _rotation_reference(sc, cfg, cfg.get("scale"))
        try:
            res = construct_nft(sc.system, sc.constraint, sc.singular, ref)
        except NFTFailure as err:
            cert = err.certificate
            return 1, [("success", False), ("message", str(err))] + [(k, cert[k]) for k in sorted(cert)
                                                                      if k not in ("attempts", "best_attempt")]
        t, rs, ys, hr, hy = _nft_rows(res, sc)
        n = sc.system.dim
        write_csv(out / "nft.csv", ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
                  + ["h_ref", "h_nft"], [[a, *r, *y, b, c] for a, r, y, b, c in zip(t, rs, ys, hr, hy)])
        svg_polyline(out / "nft.svg", [(t, hr, "reference"), (t, hy, "constructed")], f"{sc.name}: h along paths",
                     "t", "h")
        est = res.estimates
        return 0, [("success", True), ("d", res.d), ("tau1", res.tau1), ("tau_d", res.tau_d),
                   ("margin", res.margin), ("legs", len(res.legs)),
                   ("sup_distance", est.sup_distance), ("K", est.K)]
    lo, hi, n = _parse_sweep(sweep_arg)
    ds = np.logspace(np.log10(lo), np.log10(hi), n)
    refs = [reference_for_violation(sc, cfg, d) for d in ds]
    try:
        rep = sweep_nft(sc.system, sc.constraint, sc.singular, refs)
    except NFTFailure as err:
        return 1, [("success", False), ("message", str(err))]
    write_csv(out / "sweep.csv", ["d", "sup_distance", "tau_d", "derivative_l1", "K"],
              [[d, s, t, e, s / np.sqrt(d)] for d, s, t, e in zip(rep.d, rep.sup_distance, rep.tau_d,
                                                                   rep.derivative_l1)])
    svg_polyline(out / "sweep.svg", [(rep.d, rep.sup_distance, "sup |y - x|"), (rep.d, rep.tau_d, "tau(d)"),
                                     (rep.d, np.sqrt(rep.d), "sqrt(d)")],
                 f"{sc.name}: distance against violation", "d", "", logx=True, logy=True)
    ok = all(r.success for r in rep.results)
    return (0 if ok else 1), [("success", ok), ("runs", n), ("slope", rep.slope), ("K", rep.K),
                              ("K_prime", rep.K_prime)]


def _parse_sweep(text):
    try:
        lo, hi, n = str(text).split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigurationError(f"d-sweep must be lo:hi:n, got {text!r}") from None
    if not (0 < lo <= hi) or n < 1:
        raise ConfigurationError(f"d-sweep needs 0 < lo <= hi and n >= 1, got {text!r}")
    return lo, hi, n


def run_audit(sc, cfg, out):
    samples = sample_audit_points(sc.system, sc.constraint, sc.singular, seed=cfg.seed)
    rep = audit_assumptions(sc.system, sc.constraint, sc.singular, samples)
    rows = []
    for k, observed in rep.passes.items():
        expected = sc.expected.get(k)
        rows.append([k, "PASS" if observed else "FAIL",
                     "-" if expected is None else ("PASS" if expected else "FAIL"),
                     expected is None or expected == observed])
    write_csv(out / "audit.csv", ["assumption", "observed", "expected", "match"], rows)
    match = all(r[3] for r in rows)
    items = [(r[0], f"{r[1]} (expected {r[2]})") for r in rows]
    items += [("regime", rep.regime), ("alpha", rep.alpha), ("d0", rep.d0),
              ("matches_expected", match)] + [("note", n) for n in rep.notes]
    return (0 if match else 1), items


def run_drops(sc, cfg, out):
    tau0, phi = float(cfg.get("tau0")), float(cfg.get("phi"))
    betas = np.atleast_1d(np.asarray(cfg.get("betas"), dtype=float))
    drops = [("circle", 0.0, make_circle_drop(tau0, phi))] + [("pointed", b, make_pointed_drop(tau0, phi, b))
                                                             for b in betas]
    rows, series, ok = [], [], True
    t = np.linspace(0.0, tau0, 401)
    for kind, beta, drop in drops:
        cert = validate_drop(drop)
        ok &= cert.passed
        rows.append([kind, tau0, phi, beta, cert.passed, cert.c_r, " ".join(map(str, cert.failed))])
        R = drop.R(t)
        series.append((R[:, 0], R[:, 1], f"{kind} beta={beta:.4f}"))
    write_csv(out / "drops.csv", ["kind", "tau0", "phi", "beta", "passed", "c_r", "failed_clauses"], rows)
    svg_polyline(out / "drops.svg", series, "drop curves", "R1", "R2")
    return (0 if ok else 1), [(f"{r[0]} beta={r[3]:.6f}", f"{'PASS' if r[4] else 'FAIL'} C_R={r[5]:.6g}")
                              for r in rows]


def run_hjb(sc, cfg, out):
    kind = cfg.get("lagrangian")
    if kind == "constant":
        L = constant_lagrangian()
    elif kind == "distance":
        target = cfg.get("target")
        if target is None:
            target = (1.0, 0.0) if sc.name == "counterexample" else np.zeros(sc.system.dim)
        L = distance_lagrangian(np.asarray(target, dtype=float))
    else:
        raise ConfigurationError(f"unknown lagrangian {kind!r}; available: constant, distance")
    V = value_iteration(sc.system, sc.constraint, L, GridSpec.box(sc.box, cfg.get("grid")), dt=cfg.get("dt"),
                        tol=cfg.get("tol"), max_sweeps=cfg.get("max_sweeps"))
    X = V.nodes
    write_csv(out / "values.csv", [f"x{i + 1}" for i in range(X.shape[1])] + ["feasible", "V"],
              [[*x, int(m), float(v) if m else ""] for x, m, v in zip(X, V.mask, V.values)])
    svg_polyline(out / "hjb.svg", [(np.arange(1, V.sweeps + 1), V.history, "sup |V_k+1 - V_k|")],
                 f"{sc.name}: value iteration", "sweep", "increment", logy=True)
    gamma = np.exp(-V.dt)
    converged = V.residual * gamma / (1 - gamma) <= cfg.get("tol")
    return (0 if converged else 1), [("lagrangian", L.name), ("sweeps", V.sweeps), ("converged", converged),
                                     ("residual", V.residual), ("flagged", V.flagged),
                                     ("contraction_slack", V.contraction_slack),
                                     ("V_min", V.values[V.mask].min()),
                                     ("V_max", V.values[V.mask].max())] + [("note", n) for n in V.notes]


def run_sweep(sc, cfg, out):
    vary = cfg.get("vary")
    if not vary or "=" not in str(vary):
        raise ConfigurationError("sweep needs vary = key=v1,v2,...")
    key, values = str(vary).split("=", 1)
    key = key.strip()
    values = [v for v in values.split(",") if v.strip()]
    of = cfg.get("of")
    if of not in COMMANDS or of == "sweep":
        raise ConfigurationError(f"sweep cannot run {of!r}")
    codes, items = [], []
    for i, v in enumerate(values):
        items_i = {"command": of, "scenario": cfg.scenario, "seed": cfg.seed, "out": str(out / f"run_{i:03d}")}
        items_i.update({f"scenario.{k}": repr(x) for k, x in cfg.scenario_params.items()})
        items_i[key] = v
        code = run(RunConfig.from_items(items_i), echo=False)
        codes.append(code)
        items.append((f"run_{i:03d}", f"{key}={v.strip()} exit={code}"))
    return max(codes, default=0), items


DRIVERS = dict(simulate=run_simulate, nft=run_nft, audit=run_audit, drops=run_drops, hjb=run_hjb, sweep=run_sweep)


def run(config, echo=True):
    """Execute one configuration; returns the exit status."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    try:
        sc = get_scenario(config.scenario, **config.scenario_params)
    except TypeError as err:
        raise ConfigurationError(f"scenario {config.scenario}: {err}") from None
    code, items = DRIVERS[config.command](sc, config, out)
    header = [("command", config.command), ("scenario", sc.name), ("version", __version__),
              ("csv_schema", CSV_SCHEMA), ("status", "PASS" if code == 0 else "FAIL")]
    lines = write_summary(out / "summary.txt", header + list(items))
    if echo:
        print("\n".join(lines))
    return code


# --- argument parsing ---------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rotnft", description="Rotational-control experiments")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--scenario", help="built-in scenario name (default brockett_flat)")
        sp.add_argument("--config", help="flat key = value file; flags override it")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="extra parameter, repeatable; scenario parameters as scenario.NAME=VALUE")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default runs/<command>-<scenario>)")
        return sp

    s = common(sub.add_parser("simulate", help="integrate a rotation control and report the violation"))
    s.add_argument("--x0", help="initial state, comma separated (default 0)")
    s.add_argument("--omega", type=float, help="angular frequency (default 2 pi)")
    s.add_argument("--scale", type=float, help="control amplitude in (0, 1] (default 1)")
    s.add_argument("--horizon", type=float, help="final time (default 1)")
    s.add_argument("--step", type=float, help="RK4 step (default 1e-3)")

    s = common(sub.add_parser("nft", help="construct a neighboring feasible trajectory"))
    s.add_argument("--reference", help="reference family (default rotation)")
    s.add_argument("--x0")
    s.add_argument("--omega", type=float, help="reference frequency (default 4 pi)")
    s.add_argument("--scale", type=float, help="reference amplitude (default 1)")
    s.add_argument("--horizon", type=float, help="final time (default 0.5)")
    s.add_argument("--step", type=float)
    s.add_argument("--d-sweep", dest="d_sweep", help="lo:hi:n, log-spaced target violations")

    common(sub.add_parser("audit", help="check the standing assumptions against the expected flags"))

    s = common(sub.add_parser("drops", help="validate circle and pointed drops"))
    s.add_argument("--tau0", type=float, help="period (default 2 pi)")
    s.add_argument("--phi", type=float, help="phase (default 0)")
    s.add_argument("--betas", help="pointed-drop half-angles, comma separated (default pi/6, pi/4, pi/3)")

    s = common(sub.add_parser("hjb", help="value iteration for the constrained discounted problem"))
    s.add_argument("--grid", type=int, help="nodes per axis (default 17)")
    s.add_argument("--dt", type=float, help="scheme step (default 0.1)")
    s.add_argument("--tol", type=float, help="fixed-point tolerance (default 1e-3)")
    s.add_argument("--lagrangian", help="constant | distance (default distance)")
    s.add_argument("--target", help="distance target, comma separated")

    s = common(sub.add_parser("sweep", help="repeat one command over a list of parameter values"))
    s.add_argument("--of", help="command to repeat (default audit)")
    s.add_argument("--vary", help="KEY=v1,v2,... one run per value")
    return p


def _config_from_args(args):
    items = {}
    if args.config:
        items.update(read_items(Path(args.config).read_text()))
    items["command"] = args.command
    for kv in args.set:
        if "=" not in kv:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        items[k.strip()] = v
    skip = {"command", "config", "set"}
    for k, v in vars(args).items():
        if k in skip or v is None:
            continue
        items[k] = v if not isinstance(v, str) or k in ("scenario", "out", "reference", "lagrangian", "of",
                                                           "vary", "d_sweep") else _listish(v)
    cfg = RunConfig.from_items(items)
    if "out" not in items:
        cfg = replace(cfg, out=str(Path("runs") / f"{cfg.command}-{cfg.scenario}"))
    return cfg


def _listish(text):
    """``"1,2,3"`` -> ``(1, 2, 3)``; single values parse as literals."""
    return parse_value(text if "," not in text else f"({text},)")


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = _config_from_args(args)
    except (ConfigurationError, OSError) as err:
        print(f"rotnft: error: {err}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except (ConfigurationError, OSError) as err:
        print(f"rotnft: error: {cfg.command} on {cfg.scenario}: {err}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as err:
        print(f"rotnft: {cfg.command} on {cfg.scenario} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
