"""Command-line front end: ``tilepile <command> ...``.

Exit codes: 0 on success, 1 on usage errors, 2 when a reproduction
target misses its tolerance.  ``TILEPILE_THREADS`` caps the threads used by
numba and the BLAS libraries.
"""

from __future__ import annotations

import os

_threads = os.environ.get("TILEPILE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import TilepileError

# Reference values with the tolerances of the reproduction recipes.
PERIODIC_TARGETS = {
    "triangular": (1.69416, 2e-3),
    "hexagonal": (5.977657, 6e-3),
    "fcc": (0.3623, 5e-3),
}
D4_TARGETS = [0.075554, 0.0440957, 0.0389569, 0.036873324, 0.0357604]
D4_FACTOR_TARGETS = [(52.9428, 0.17), (68.03486, 0.27), (51.3393, 0.17), (27.1201, 0.084)]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_spec(ref: str):
    """A built-in name or a path to a JSON tiling spec."""
    from .library import get_spec
    from .tiling import TilingSpec

    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise UsageError(f"spec file not found: {ref}")
        return TilingSpec.from_dict(json.loads(p.read_text()))
    try:
        return get_spec(ref)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc


def load_family(ref: str | None, spec, spec_ref: str | None = None):
    """A reflection family from a JSON file, or the built-in one for ``spec_ref``."""
    from .library import get_family
    from .tiling import ReflectionFamily

    if ref:
        p = Path(ref)
        if p.exists():
            return ReflectionFamily.from_dict(json.loads(p.read_text()), spec)
        spec_ref = ref
    if spec_ref is None:
        return None
    try:
        return get_family(spec_ref)
    except KeyError:
        data = json.loads(Path(spec_ref).read_text()) if Path(spec_ref).exists() else {}
        if "reflections" in data:
            return ReflectionFamily.from_dict(data["reflections"], spec)
        raise UsageError(f"no reflection family for {spec_ref!r}; pass --family")


def load_graph(ref: str, family_ref: str | None = None):
    """Parse ``SPEC:M[:torus|open]`` into a finite sandpile graph."""
    from .tiling import build_open, build_torus

    parts = ref.rsplit(":", 2)
    if len(parts) == 2:
        parts.append("torus")
    if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in ("torus", "open"):
        raise UsageError(f"graph must look like SPEC:M[:torus|open], got {ref!r}")
    spec = load_spec(parts[0])
    m = int(parts[1])
    if parts[2] == "torus":
        return build_torus(spec, m)
    return build_open(spec, load_family(family_ref, spec, parts[0]), m)


def parse_steps(text: str) -> list:
    """``"0:100:10"`` (start:stop:step, stop inclusive) or ``"0,5,20"``."""
    try:
        if ":" in text:
            a = [int(x) for x in text.split(":")]
            start, stop = a[0], a[1]
            inc = a[2] if len(a) > 2 else 1
            if inc <= 0:
                raise ValueError
            return list(range(start, stop + 1, inc))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse steps {text!r}") from exc


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def header(spec_hash, knobs: dict, seed=None) -> dict:
    return {"tool": "tilepile", "version": __version__, "spec_hash": spec_hash,
            "knobs": knobs, "seed": seed}


def write_csv(path, meta: dict, columns, rows):
    """CSV with ``# key: value`` header lines."""
    out = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        for k, v in meta.items():
            out.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    finally:
        if out is not sys.stdout:
            out.close()


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(meta, columns, rows)``."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, v = line[2:].split(": ", 1)
            meta[k] = json.loads(v)
        else:
            lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_json(path, data: dict):
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True)
    if path and path != "-":
        Path(path).write_text(text + "\n")
    else:
        print(text)


def write_config(path, graph, chips):
    """Flat integer array with a header naming the graph hash."""
    text = f"# graph_hash: {graph.graph_hash()}\n# graph: {graph.name}\n" + " ".join(str(int(c)) for c in chips) + "\n"
    if path and path != "-":
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def read_config(path, graph):
    from .sandpile import Configuration

    body, gh = [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# graph_hash:"):
            gh = line.split(":", 1)[1].strip()
        elif not line.startswith("#"):
            body.extend(line.split())
    if gh is not None and gh != graph.graph_hash():
        raise UsageError("configuration was written for a different graph")
    return Configuration(graph, [int(x) for x in body])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_tiling(args) -> int:
    from .tiling import check_condition_A, check_reflection

    spec = load_spec(args.spec)
    if args.action == "validate":
        report = {"name": spec.name, "dim": spec.dim, "cells": spec.n_cells, "edges": spec.n_edges,
                  "spec_hash": spec.spec_hash(), "valid": True}
        try:
            fam = load_family(args.family, spec, args.spec)
        except (UsageError, KeyError):
            fam = None
        if fam is not None:
            report["condition_A"] = bool(check_condition_A(spec, fam))
            report["reflection"] = bool(check_reflection(spec, fam))
        write_json(args.out, report)
        return 0
    if (args.torus is None) == (args.open is None):
        raise UsageError("tiling build needs exactly one of --torus M or --open M")
    graph = load_graph(f"{args.spec}:{args.torus or args.open}:{'torus' if args.torus else 'open'}",
                       args.family)
    adj = graph.adjacency.tocoo()
    data = {"meta": header(spec.spec_hash(), {"torus": args.torus, "open": args.open}),
            "graph": graph.descriptor(), "graph_hash": graph.graph_hash(),
            "edges": [[int(i), int(j), int(w)] for i, j, w in zip(adj.row, adj.col, adj.data) if i < j]}
    write_json(args.out, data)
    return 0


def cmd_sandpile(args) -> int:
    from .sandpile import Configuration, group_order, identity, stabilize

    graph = load_graph(args.graph, args.family)
    if args.action == "identity":
        write_config(args.out, graph, identity(graph).chips)
    elif args.action == "stabilize":
        if not args.config:
            raise UsageError("sandpile stabilize needs --config FILE")
        sigma = read_config(args.config, graph)
        write_config(args.out, graph, stabilize(Configuration(graph, sigma.chips))[0].chips)
    else:
        write_json(args.out, {"graph": graph.descriptor(), "graph_hash": graph.graph_hash(),
                              "order": str(group_order(graph))})
    return 0


def cmd_greens(args) -> int:
    from .functions import FunctionOnTiling
    from .greens import discrete_derivative, greens_infinite, greens_torus

    spec = load_spec(args.spec)
    try:
        eta = FunctionOnTiling.from_json(json.loads(args.eta))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cannot parse --eta: {exc}") from exc
    if args.radius is not None:
        table = greens_infinite(spec, eta, args.radius, m1=args.m)
    else:
        table = greens_torus(spec, args.m, eta)
    if args.derivative:
        table = discrete_derivative(table, [int(x) for x in args.derivative.split(",")])
    knobs = {"m": args.m, "radius": args.radius, "eta": eta.to_json(), "derivative": args.derivative}
    rows = ([c, " ".join(str(int(x)) for x in n), v, tag] for c, n, v, tag in table.rows())
    write_csv(args.out, header(spec.spec_hash(), knobs), ["cell", "coords", "value", "derivative"], rows)
    return 0


def cmd_gamma(args) -> int:
    from .spectral import SpectralSearch

    spec = load_spec(args.spec)
    js = [int(x) for x in args.j.split(",")] if args.j else None
    family = None
    if js and any(j > 0 for j in js):
        family = load_family(args.family, spec, args.spec)
    est = SpectralSearch(B=args.B, R0=args.R0, precision=args.precision, js=js).fit(spec, family)
    report = est.params_.to_dict()
    if est.factors_ is not None:
        report["factors"] = est.factors_.to_dict()
    report["meta"] = header(spec.spec_hash(), {"B": args.B, "R0": args.R0, "precision": args.precision,
                                               "j": js})
    write_json(args.out, report)
    return 0


def cmd_mixing(args) -> int:
    from . import mixing

    graph = load_graph(args.graph, args.family)
    spec_hash = graph.spec.spec_hash() if graph.spec is not None else None
    knobs = {"graph": args.graph, "steps": args.steps, "chains": args.chains}
    if args.action == "cutoff":
        ms = [int(x) for x in args.ms.split(",")]
        boundary = args.graph.rsplit(":", 1)[-1] if args.graph.count(":") == 2 else "torus"
        fam = graph.family if boundary == "open" else None
        rows = mixing.cutoff_scan(graph.spec, boundary, ms, family=fam, chains=args.chains, seed=args.seed)
        knobs["ms"] = ms
        cols = ["m", "n_vertices", "t_mix", "width", "ratio", "t_pred", "seed"]
        write_csv(args.out, header(spec_hash, knobs, args.seed), cols, ([r[c] for c in cols] for r in rows))
        return 0
    steps = parse_steps(args.steps)
    if args.action == "l2":
        prof = mixing.l2_profile(graph, steps)
        seed = None
    else:
        prof = mixing.mc_mixing(graph, args.chains, steps, seed=args.seed)
        seed = args.seed
        knobs["t_mix"] = prof.t_mix
        knobs["predicted"] = prof.predicted
    write_csv(args.out, header(spec_hash, knobs, seed), list(prof.COLUMNS), prof.rows())
    return 0


def _reproduce_periodic(args):
    from .library import get_spec
    from .spectral import gamma_search

    names = args.lattices.split(",") if args.lattices else list(PERIODIC_TARGETS)
    rows = []
    for name in names:
        if name not in PERIODIC_TARGETS:
            raise UsageError(f"unknown lattice {name!r}")
        target, tol = PERIODIC_TARGETS[name]
        t0 = time.perf_counter()
        p = gamma_search(get_spec(name), B=args.B, R0=args.R0, precision=args.precision)
        rows.append({"quantity": f"gamma_{name}", "computed": p.gamma, "error": p.gamma_error,
                     "target": target, "tolerance": tol, "passed": abs(p.gamma - target) <= tol,
                     "seconds": time.perf_counter() - t0})
    return rows


def _reproduce_d4(args):
    from .library import d4, d4_family
    from .spectral import SpectralSearch

    B = args.B if args.B is not None else 2
    est = SpectralSearch(B=B, R0=args.R0, precision=args.precision).fit(d4(), d4_family())
    rows = []
    for j, (g, target) in enumerate(zip(est.params_.gamma_j, D4_TARGETS)):
        rows.append({"quantity": f"gamma_D4_{j}", "computed": g, "error": est.params_.gamma_j_errors[j],
                     "target": target, "tolerance": 0.01 * target, "passed": abs(g - target) <= 0.01 * target})
    ft = est.factors_
    for j, (target, bar) in enumerate(D4_FACTOR_TARGETS):
        tol = bar + ft.errors[j]
        rows.append({"quantity": f"Gamma_D4_{j}", "computed": ft.factors[j], "error": ft.errors[j],
                     "target": target, "tolerance": tol, "passed": abs(ft.factors[j] - target) <= tol})
    f = ft.factors
    rows.append({"quantity": "ordering G1>G0>G2>G3", "computed": math.nan, "error": math.nan,
                 "target": math.nan, "tolerance": math.nan, "passed": f[1] > f[0] > f[2] > f[3]})
    return rows


def cmd_reproduce(args) -> int:
    if args.target == "theorem-1.4":
        if args.B is None:
            args.B = 4
        rows = _reproduce_periodic(args)
    else:
        rows = _reproduce_d4(args)
    width = max(len(r["quantity"]) for r in rows)
    print(f"{'quantity':<{width}}  {'computed':>12}  {'error':>9}  {'target':>12}  {'tol':>9}  result")
    for r in rows:
        print(f"{r['quantity']:<{width}}  {r['computed']:>12.7g}  {r['error']:>9.2g}  {r['target']:>12.7g}  "
              f"{r['tolerance']:>9.2g}  {'PASS' if r['passed'] else 'FAIL'}")
    if args.out:
        write_json(args.out, {"meta": header(None, {"B": args.B, "R0": args.R0, "precision": args.precision}),
                              "rows": rows})
    return 0 if all(r["passed"] for r in rows) else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tilepile", description="Sandpiles on periodic tilings.")
    p.add_argument("--version", action="version", version=f"tilepile {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tiling", help="validate a spec or build a finite graph")
    t.add_argument("action", choices=["validate", "build"])
    t.add_argument("spec")
    t.add_argument("--family")
    t.add_argument("--torus", type=int)
    t.add_argument("--open", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_tiling)

    s = sub.add_parser("sandpile", help="sandpile group operations")
    s.add_argument("action", choices=["identity", "stabilize", "order"])
    s.add_argument("--graph", required=True, help="SPEC:M[:torus|open]")
    s.add_argument("--family")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sandpile)

    g = sub.add_parser("greens", help="Green's convolution table")
    g.add_argument("--spec", required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--eta", required=True, help='JSON, e.g. [[0, [0, 0], 1], [0, [1, 0], -1]]')
    g.add_argument("--radius", type=int)
    g.add_argument("--derivative", help="comma separated multi-index")
    g.add_argument("--out")
    g.set_defaults(func=cmd_greens)

    a = sub.add_parser("gamma", help="spectral parameters")
    a.add_argument("--spec", required=True)
    a.add_argument("--family")
    a.add_argument("--j", help="comma separated list of j")
    a.add_argument("--B", type=int, default=4)
    a.add_argument("--R0", type=int, default=2)
    a.add_argument("--precision", type=float, default=1e-3)
    a.add_argument("--out")
    a.set_defaults(func=cmd_gamma)

    mx = sub.add_parser("mixing", help="mixing profiles")
    mx.add_argument("action", choices=["l2", "mc", "cutoff"])
    mx.add_argument("--graph", required=True, help="SPEC:M[:torus|open]")
    mx.add_argument("--family")
    mx.add_argument("--steps", default="0:100:10")
    mx.add_argument("--ms", default="8,16,32", help="sizes for cutoff")
    mx.add_argument("--chains", type=int, default=1000)
    mx.add_argument("--seed", type=int, default=0)
    mx.add_argument("--out")
    mx.set_defaults(func=cmd_mixing)

    r = sub.add_parser("reproduce", help="reproduction recipes")
    r.add_argument("target", choices=["theorem-1.4", "theorem-1.5"])
    r.add_argument("--precision", type=float, default=1e-3)
    r.add_argument("--B", type=int)
    r.add_argument("--R0", type=int, default=2)
    r.add_argument("--lattices", help="subset of triangular,hexagonal,fcc")
    r.add_argument("--out")
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return int(args.func(args))
    except UsageError as exc:
        print(f"tilepile: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except TilepileError as exc:
        print(f"tilepile: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
