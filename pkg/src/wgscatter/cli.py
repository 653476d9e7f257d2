"""Command-line driver.

Configuration comes from an optional INI file (``--config``) with sections
``[domain]``, ``[numerics]``, ``[output]`` and one section per command;
every key can be overridden by a flag.  Results are CSV files with 17
significant digits and a versioned header line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidGeometry, ParseError, RefinementTooCoarse, WaveguideError
from .geometry import DomainKind, DomainSpec, Stub
from .model import Waveguide, load_or_build_basis, load_or_build_mesh
from .modes import TransverseBasis
from .resonance import embedded_scan, locate_resonances
from .scattering import s_derivatives
from .timedelay import time_delay

log = logging.getLogger("wgscatter")

CSV_VERSION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    M: int = 1000
    modes_per_port: int = 20
    order: int = 2
    lam_tilde: float = -1.0
    sheet: tuple = (1,)
    accelerate: bool = True
    output: str = "."
    cache_dir: str = ".wgcache"
    workers: int = 1
    command: dict = field(default_factory=dict)

    def validate(self):
        if self.M < 1:
            raise ConfigError("M must be positive")
        if self.modes_per_port < 1:
            raise ConfigError("modes_per_port must be positive")
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        if not self.sheet or any(j < 1 for j in self.sheet):
            raise ConfigError("sheet labels are 1-based threshold indices")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        try:
            self.domain.validate()
        except InvalidGeometry as exc:
            raise ConfigError(str(exc)) from None
        return self


# parsing helpers --------------------------------------------------------------

def _complex(text):
    try:
        return complex(text.strip().replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def _floats(text, n=None):
    try:
        vals = [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _stubs(text):
    out = []
    for part in str(text).split(";"):
        if part.strip():
            vals = _floats(part)
            if not 1 <= len(vals) <= 3:
                raise ConfigError(f"stub needs 'width[, length[, angle]]', got {part!r}")
            out.append(Stub(*vals))
    return tuple(out)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_DOMAIN_KEYS = {
    "kind": lambda v: DomainKind(v.strip().lower()),
    "channel_width": float, "channel_length": float, "obstacle_radius": float,
    "obstacle_offset": float, "disc_radius": float, "stubs": _stubs,
    "refinement": int, "mesh_path": str,
}
_NUMERIC_KEYS = {"M": int, "modes_per_port": int, "order": int, "lam_tilde": float,
                 "sheet": lambda v: tuple(int(x) for x in _floats(v)),
                 "accelerate": _bool, "workers": int}
_OUTPUT_KEYS = {"directory": str, "cache_dir": str}


def _apply(section, keys, target, where):
    for key, raw in section.items():
        if key not in keys:
            raise ConfigError(f"unknown key '{key}' in [{where}]")
        try:
            target[key] = keys[key](raw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from None


def load_config(path=None, overrides=None, command=None):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    domain, numerics, output = {}, {}, {}
    known = {"domain", "numerics", "output"}
    for name in parser.sections():
        if name == "domain":
            _apply(parser[name], _DOMAIN_KEYS, domain, name)
        elif name == "numerics":
            _apply(parser[name], _NUMERIC_KEYS, numerics, name)
        elif name == "output":
            _apply(parser[name], _OUTPUT_KEYS, output, name)
        elif name not in COMMANDS:
            raise ConfigError(f"unknown section [{name}]")
        known.add(name)
    cmd = dict(parser[command]) if command and parser.has_section(command) else {}
    overrides = overrides or {}
    for key, val in overrides.get("domain", {}).items():
        domain[key] = val
    for key, val in overrides.get("numerics", {}).items():
        numerics[key] = val
    for key, val in overrides.get("output", {}).items():
        output[key] = val
    cmd.update(overrides.get("command", {}))
    try:
        spec = DomainSpec(**domain)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(domain=spec, output=output.get("directory", "."),
                    cache_dir=output.get("cache_dir", ".wgcache"), command=cmd, **numerics)
    return cfg.validate()


# CSV --------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer, str)):
        return str(x)
    return "%.17g" % float(x)


class CsvOut:
    def __init__(self, name, columns):
        self.name = name
        self.columns = columns
        self.buf = io.StringIO()
        self.buf.write(f"# wgscatter {name} v{CSV_VERSION}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.writer.writerow(columns)

    def row(self, *values):
        if len(values) != len(self.columns):
            raise AssertionError("column count mismatch")
        self.writer.writerow([_fmt(v) for v in values])

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.buf.getvalue())
        return path


def _sqrt(lam):
    r = np.sqrt(complex(lam))
    return r if r.real >= 0 else -r


# commands ---------------------------------------------------------------------

def _model(cfg):
    mesh = load_or_build_mesh(cfg.domain, cfg.cache_dir)
    basis = TransverseBasis.from_widths(mesh.port_widths, cfg.modes_per_port)
    eb = load_or_build_basis(mesh, basis, cfg.M, cfg.order, cfg.lam_tilde, cfg.cache_dir)
    return Waveguide(cfg.domain, mesh, basis, eb, cfg.accelerate)


def _sheet_label(J):
    return "{" + " ".join(str(j) for j in J) + "}"


def _map(cfg, fn, items):
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_basis(cfg):
    mesh = load_or_build_mesh(cfg.domain, cfg.cache_dir)
    basis = TransverseBasis.from_widths(mesh.port_widths, cfg.modes_per_port)
    stats = {}
    eb = load_or_build_basis(mesh, basis, cfg.M, cfg.order, cfg.lam_tilde, cfg.cache_dir,
                             stats=stats)
    status = "cache hit" if stats["hit"] else "computed"
    print(f"{status}: {stats['path']} (M={eb.M}, P_tot={eb.P_tot}, "
          f"lowest nonzero eigenvalue {eb.eigenvalues[eb.eigenvalues > 1e-9][:1]})")
    return stats


def _lambda_list(cfg):
    raw = cfg.command.get("lambdas", "")
    return [_complex(x) for x in str(raw).split(",") if x.strip()]


def cmd_smatrix(cfg):
    n = int(cfg.command.get("n", 0))
    physical = _bool(cfg.command.get("physical", "false"))
    lams = _lambda_list(cfg)
    out = CsvOut("smatrix", ["lam_re", "lam_im", "sqrt_re", "sqrt_im", "sheet", "j", "k", "p",
                             "re", "im", "gap", "extraction_rcond",
                             "extraction_residual"])
    if lams:
        wg = _model(cfg)
        J = wg.sheet(cfg.sheet)

        def one(lam):
            return s_derivatives(lam, J, wg.basis, wg.eigenbasis, n, physical, wg.accelerate)

        for lam, sd in zip(lams, _map(cfg, one, lams)):
            r = _sqrt(lam)
            for p in range(n + 1):
                S = sd[p]
                for a, j in enumerate(sd.modes):
                    for b, k in enumerate(sd.modes):
                        out.row(lam.real, lam.imag, r.real, r.imag, _sheet_label(cfg.sheet),
                                int(j) + 1, int(k) + 1, p, S[a, b].real, S[a, b].imag,
                                sd.diagnostics["gap"], sd.diagnostics["extraction_rcond"],
                                sd.diagnostics["extraction_residual"])
    return out.save(Path(cfg.output) / "smatrix.csv")


RES_COLUMNS = ["lam_re", "lam_im", "sqrt_re", "sqrt_im", "order", "sheet", "newton_residual",
               "count_re", "count_im", "cluster"]


def _resonance_args(cfg):
    try:
        return (tuple(_floats(cfg.command.get("region", "0, 15, -3, 3"), 4)),
                int(cfg.command.get("max_depth", 14)), float(cfg.command.get("margin", 1e-3)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _resonance_rows(cfg, wg, out, prefix=()):
    region, max_depth, margin = _resonance_args(cfg)
    res = locate_resonances(wg, region, cfg.sheet, max_depth=max_depth, margin=margin)
    for r in res:
        s = r.sqrt_lam
        out.row(*prefix, r.lam.real, r.lam.imag, s.real, s.imag, r.order,
                _sheet_label(cfg.sheet), r.newton_residual, r.count_integral_value.real,
                r.count_integral_value.imag, r.cluster)
    return res


def cmd_resonances(cfg):
    _resonance_args(cfg)
    out = CsvOut("resonances", RES_COLUMNS)
    _resonance_rows(cfg, _model(cfg), out)
    return out.save(Path(cfg.output) / "resonances.csv")


def cmd_embedded(cfg):
    a, b = _floats(cfg.command.get("interval", ""), 2)
    step = float(cfg.command.get("step", 1e-3))
    out = CsvOut("embedded", ["lam", "sqrt_lam", "sheet"])
    for x in embedded_scan(_model(cfg), (a, b), cfg.sheet, step=step):
        out.row(x, np.sqrt(x), _sheet_label(cfg.sheet))
    return out.save(Path(cfg.output) / "embedded.csv")


def cmd_timedelay(cfg):
    if "lambdas" in cfg.command:
        lams = [_complex(x).real for x in cfg.command["lambdas"].split(",") if x.strip()]
    else:
        a, b, n = _floats(cfg.command.get("grid", "0.01, 1, 50"), 3)
        lams = list(np.linspace(a, b, int(n)))
    out = CsvOut("timedelay", ["lam", "sqrt_lam", "trace_re", "trace_im", "raw_trace_re",
                               "raw_trace_im", "hermiticity_defect"])
    wg = _model(cfg)
    for lam, td in zip(lams, _map(cfg, lambda x: time_delay(wg, x, cfg.sheet), lams)):
        out.row(lam, np.sqrt(lam), td.trace.real, td.trace.imag, td.raw_trace.real,
                td.raw_trace.imag, td.hermiticity_defect)
    return out.save(Path(cfg.output) / "timedelay.csv")


def cmd_sheetgrid(cfg):
    re0, re1, im0, im1 = _floats(cfg.command.get("region", ""), 4)
    rows = int(cfg.command.get("rows", 50))
    cols = int(cfg.command.get("cols", 50))
    physical = _bool(cfg.command.get("physical", "false"))
    if rows < 1 or cols < 1:
        raise ConfigError("grid needs at least one row and one column")
    wg = _model(cfg)
    J = wg.sheet(cfg.sheet)
    ims = np.linspace(im0, im1, rows)
    res = np.linspace(re0, re1, cols)
    pts = [(i, j, complex(res[j], ims[i])) for i in range(rows) for j in range(cols)]

    def one(p):
        try:
            S = s_derivatives(p[2], J, wg.basis, wg.eigenbasis, 0, physical, wg.accelerate).S
            return abs(np.linalg.det(S))
        except WaveguideError:
            return float("inf")

    out = CsvOut("sheetgrid", ["row", "col", "lam_re", "lam_im", "abs_det"])
    for (i, j, z), v in zip(pts, _map(cfg, one, pts)):
        out.row(i, j, z.real, z.imag, v)
    return out.save(Path(cfg.output) / "sheetgrid.csv")


def cmd_sweep(cfg):
    param = cfg.command.get("parameter", "obstacle_offset")
    values = _floats(cfg.command.get("values", ""))
    if param not in _DOMAIN_KEYS or param in ("kind", "stubs", "mesh_path"):
        if param != "stub_width":
            raise ConfigError(f"cannot sweep '{param}'")
    _resonance_args(cfg)
    out = CsvOut("sweep", ["parameter", "value"] + RES_COLUMNS)
    for v in values:
        if param == "stub_width":
            stubs = tuple(replace(s, width=v) for s in cfg.domain.stubs)
            spec = replace(cfg.domain, stubs=stubs)
        else:
            spec = replace(cfg.domain, **{param: v})
        try:
            spec.validate()
        except InvalidGeometry as exc:
            raise ConfigError(str(exc)) from None
        sub = replace(cfg, domain=spec)
        _resonance_rows(sub, _model(sub), out, prefix=(param, v))
    return out.save(Path(cfg.output) / "sweep.csv")


COMMANDS = {
    "basis": cmd_basis, "smatrix": cmd_smatrix, "resonances": cmd_resonances,
    "embedded": cmd_embedded, "timedelay": cmd_timedelay, "sheetgrid": cmd_sheetgrid,
    "sweep": cmd_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="wgscatter", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    g = common.add_argument_group("domain")
    g.add_argument("--kind", choices=[k.value for k in DomainKind])
    g.add_argument("--channel-width", type=float)
    g.add_argument("--channel-length", type=float)
    g.add_argument("--obstacle-radius", type=float)
    g.add_argument("--obstacle-offset", type=float)
    g.add_argument("--disc-radius", type=float)
    g.add_argument("--stubs", help="'w,l,angle; w,l,angle'")
    g.add_argument("--refinement", type=int)
    g.add_argument("--mesh-path")
    g = common.add_argument_group("numerics")
    g.add_argument("--M", type=int, dest="M")
    g.add_argument("--modes-per-port", type=int)
    g.add_argument("--order", type=int)
    g.add_argument("--lam-tilde", type=float)
    g.add_argument("--sheet", help="threshold labels, e.g. '1' or '1,2'")
    g.add_argument("--no-accelerate", action="store_true")
    g.add_argument("--workers", type=int)
    g = common.add_argument_group("output")
    g.add_argument("--output", help="output directory")
    g.add_argument("--cache-dir")
    specific = {
        "basis": [],
        "smatrix": [("--lambdas", "comma-separated complex values"), ("--n", "derivative order"),
                    ("--physical", "true/false")],
        "resonances": [("--region", "re0,re1,im0,im1"), ("--max-depth", None),
                       ("--margin", None)],
        "embedded": [("--interval", "a,b"), ("--step", None)],
        "timedelay": [("--lambdas", None), ("--grid", "start,stop,count")],
        "sheetgrid": [("--region", "re0,re1,im0,im1"), ("--rows", None), ("--cols", None),
                      ("--physical", None)],
        "sweep": [("--parameter", None), ("--values", None), ("--region", None),
                  ("--max-depth", None), ("--margin", None)],
    }
    helps = {
        "basis": "build or load the cached eigenbasis",
        "smatrix": "S and its derivatives at a list of lambda values",
        "resonances": "poles inside a rectangle of the lambda plane",
        "embedded": "real eigenvalues inside a threshold interval",
        "timedelay": "time-delay trace on a real grid",
        "sheetgrid": "|det S| on a grid, for contour plots",
        "sweep": "resonances over a family of domains",
    }
    for name, opts in specific.items():
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        for flag, hlp in opts:
            sp.add_argument(flag, help=hlp)
    return p


def _overrides(args):
    dom = {}
    for key in ("channel_width", "channel_length", "obstacle_radius", "obstacle_offset",
                "disc_radius", "refinement", "mesh_path"):
        v = getattr(args, key, None)
        if v is not None:
            dom[key] = v
    if args.kind:
        dom["kind"] = DomainKind(args.kind)
    if args.stubs:
        dom["stubs"] = _stubs(args.stubs)
    num = {}
    for key in ("M", "modes_per_port", "order", "lam_tilde", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            num[key] = v
    if args.sheet:
        num["sheet"] = tuple(int(x) for x in _floats(args.sheet))
    if args.no_accelerate:
        num["accelerate"] = False
    out = {}
    if args.output:
        out["directory"] = args.output
    if args.cache_dir:
        out["cache_dir"] = args.cache_dir
    cmd = {}
    for key in ("lambdas", "n", "physical", "region", "max_depth", "margin", "interval",
                "step", "grid", "rows", "cols", "parameter", "values"):
        v = getattr(args, key, None)
        if v is not None:
            cmd[key] = v
    return {"domain": dom, "numerics": num, "output": out, "command": cmd}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args), args.command)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidGeometry, RefinementTooCoarse, ParseError, ValueError) as exc:
        # bad numbers in the command section surface as ValueError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WaveguideError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if isinstance(result, Path):
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
