"""Command-line front end and experiment manifests.

Every subcommand builds an :class:`ExperimentManifest` and runs it, so
``rauzylab lyapunov ...`` and ``rauzylab run manifest.json`` share one code
path.  Results go to JSON (structured) and CSV (tabular), written atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources

import jsonschema
import numpy as np

from . import combinatorics as comb
from . import rauzy, suspension, weak_stable
from .arith import RATIONAL, Arithmetic, QuadraticNumber, default_precision, parse_exact
from .cocycle import (
    anomalous_growth_experiment,
    contraction_deviation_experiment,
    lyapunov_spectrum,
    sample_stream,
)
from .combinatorics import Permutation
from .errors import CapExceededError, InputError, PrecisionError, RauzyLabError, TieError
from .iet import LengthVector

KINDS = ("perm-info", "rauzy-class", "induct", "orbit", "lyapunov", "survival",
         "weakmix-scan", "suspend", "deviations")
SEED_MAX = 2**64 - 1

EXIT_OK, EXIT_INPUT, EXIT_CAP, EXIT_PRECISION, EXIT_OTHER = 0, 2, 3, 4, 1


# --------------------------------------------------------------------------- manifest


@dataclass
class SystemSpec:
    permutation: str
    gamma0: list | None = None
    mode: str = "rational"
    precision_bits: int = field(default_factory=default_precision)

    def arithmetic(self) -> Arithmetic:
        return Arithmetic(self.mode, self.precision_bits)

    def perm(self) -> Permutation:
        return Permutation.parse(self.permutation)

    def simplex(self) -> rauzy.SimplexSystem:
        p = self.perm()
        if self.gamma0:
            return rauzy.SimplexSystem.from_kinds(p, self.gamma0)
        return rauzy.SimplexSystem.largest(p)


@dataclass
class ExperimentManifest:
    system: SystemSpec
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"system": asdict(self.system), "experiment": {"kind": self.kind, "params": self.params},
                "seed": self.seed, "outputs": self.outputs}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> ExperimentManifest:
        try:
            jsonschema.validate(data, load_schema("manifest"))
        except jsonschema.ValidationError as exc:
            raise InputError(f"invalid manifest: {exc.message}") from None
        exp = data["experiment"]
        return cls(SystemSpec(**data["system"]), exp["kind"], dict(exp.get("params", {})),
                   int(data.get("seed", 0)), dict(data.get("outputs", {})))

    @classmethod
    def load(cls, path: str) -> ExperimentManifest:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}") from None
        return cls.from_json(data)


def load_schema(name: str) -> dict:
    text = resources.files("rauzylab.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


# --------------------------------------------------------------------------- output


def atomic_write(path: str, text: str):
    """Write via a temporary file in the target directory and rename it into place."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (Fraction, QuadraticNumber)):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (bool, int, str)) or x is None:
        return x
    return str(x)


@dataclass
class Outcome:
    result: dict
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)  # (label, value) pairs


# --------------------------------------------------------------------------- experiments


def _lengths(text: str | None, p: Permutation, arith: Arithmetic) -> LengthVector | None:
    if text is None:
        return None
    parts = [s for s in text.split(",") if s.strip()]
    if len(parts) != p.d:
        raise InputError(f"--lambda needs {p.d} comma-separated values, got {len(parts)}")
    return LengthVector.of([parse_exact(s) for s in parts], arith)


def _random_lengths(sys: rauzy.SimplexSystem, seed: int, arith: Arithmetic) -> LengthVector:
    return sys.sample(sample_stream(seed, 0), arith, bits=64)


def _perm_info(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    irr = comb.is_irreducible(p)
    res = {"permutation": str(p), "d": p.d, "irreducible": irr, "monodromy": list(p.monodromy)}
    if irr:
        prof = comb.singularity_profile(p)
        rule = comb.check_one_vector_rule(p)
        tm = comb.omega_maps(p)
        res.update({
            "rotation": comb.is_rotation(p),
            "genus": prof.genus,
            "n_singularities": prof.n_singularities,
            "singularities": [sorted(s) for s in prof.orbits],
            "b_vectors": [list(prof.b_vectors[s]) for s in prof.orbits],
            "dim_H": tm.rank,
            "ones_in_H": rule.ones_in_H,
            "omega": comb.omega_matrix(p),
        })
        summary = [("genus", prof.genus), ("Sigma size", prof.n_singularities), ("dim H", tm.rank),
                   ("(1,...,1) in H", "yes" if rule.ones_in_H else "no")]
    else:
        summary = [("irreducible", "no")]
    return Outcome(res, summary=summary)


def _rauzy_class(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    cls = rauzy.rauzy_class(p, cap=int(m.params.get("cap", rauzy.CLASS_CAP)))
    members = []
    for k, q in enumerate(cls.members):
        prof = comb.singularity_profile(q)
        members.append({"index": k, "permutation": str(q), "genus": prof.genus,
                        "n_singularities": prof.n_singularities, "rotation": comb.is_rotation(q),
                        "top_next": cls.top_next[k], "bottom_next": cls.bottom_next[k]})
    inv = cls.invariants()
    return Outcome({"root": str(p), "invariants": inv, "members": members}, rows=members,
                   summary=[("members", inv["size"]), ("genus", inv["genus"]),
                            ("singularities", inv["n_singularities"])])


def _induct(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    arith = m.system.arithmetic()
    lv = _lengths(m.params.get("lambda"), p, arith)
    if lv is None:
        raise InputError("induct needs lengths (--lambda)")
    steps = int(m.params.get("steps", 1))
    rows = [{"step": 0, "permutation": str(p), "kind": "", "lengths": ",".join(str(v) for v in lv.values)}]
    trace = [rows[0]["lengths"]]
    for n in range(1, steps + 1):
        try:
            lv, p, arrow = rauzy.induction_step(lv, p)
        except TieError as exc:
            print(" -> ".join(trace), flush=True)
            raise TieError(f"tie at step {n}: {exc}", step=n) from None
        rows.append({"step": n, "permutation": str(p), "kind": arrow.kind,
                     "lengths": ",".join(str(v) for v in lv.values)})
        trace.append(rows[-1]["lengths"])
    return Outcome({"trace": rows, "final": lv.to_json(p.alphabet)}, rows=rows,
                   summary=[("trace", " -> ".join(trace))])


def _orbit(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    arith = m.system.arithmetic()
    sys_ = m.system.simplex()
    lv = _lengths(m.params.get("lambda"), p, arith) or _random_lengths(sys_, m.seed, arith)
    steps = int(m.params.get("steps", 100))
    res = rauzy.follow_orbit(p, lv, steps, renormalize=bool(m.params.get("renormalize", True)),
                             log_rows=True, system=sys_)
    rows = [{**r, "lengths": ";".join(r["lengths"])} for r in res.rows]
    out = {"start": str(p), "initial": lv.to_json(p.alphabet), "final": res.lengths.to_json(p.alphabet),
           "permutation": str(res.permutation), "steps": res.steps,
           "streaks": rauzy.streak_lengths(res.path.kinds),
           "matrix_norm": max(sum(r) for r in res.path.matrix),
           "precision_bits": res.precision_bits,
           "returns_to_delta": sum(r["returned"] for r in res.rows)}
    return Outcome(out, rows=rows, summary=[("steps", res.steps), ("final permutation", str(res.permutation)),
                                            ("Delta returns", out["returns_to_delta"])])


def _lyapunov(m: ExperimentManifest) -> Outcome:
    sys_ = m.system.simplex()
    est = lyapunov_spectrum(sys_, m.seed, int(m.params.get("steps", 10**4)),
                            n_batches=int(m.params.get("batches", 50)))
    factor = float(m.params.get("pairing_factor", 3.0))
    out = {"system": sys_.to_json(), "exponents": est.exponents, "ci_halfwidth": est.ci_halfwidth,
           "pair_sums": est.pair_sums, "pair_halfwidth": est.pair_halfwidth,
           "pairing_ok": est.pairing_ok(factor), "n_positive": est.n_significantly_positive(factor),
           "genus": est.genus, "steps": est.steps, "time_unit": est.time_unit,
           "mean_return_time": est.mean_return_time, "mean_induction_steps": est.mean_induction_steps,
           "exponents_per_log_time": est.rescaled(), "max_h_residual": est.max_h_residual}
    rows = [{"i": i + 1, "exponent": t, "halfwidth": w} for i, (t, w) in enumerate(zip(est.exponents, est.ci_halfwidth))]
    return Outcome(out, rows=rows, summary=[
        ("exponents", " ".join(f"{t:.4g}" for t in est.exponents)),
        ("pairing", "pass" if out["pairing_ok"] else "fail"),
        ("significantly positive", out["n_positive"])])


def _survival(m: ExperimentManifest) -> Outcome:
    sys_ = m.system.simplex()
    prm = m.params
    J = weak_stable.random_line(sys_.d, float(prm.get("line_norm", 0.02)), sample_stream(m.seed, 2**32))
    st = weak_stable.survival_probability(
        sys_, J, delta=float(prm.get("delta", weak_stable.DEFAULT_DELTA)), m_max=int(prm.get("m_max", 20)),
        N=int(prm.get("N", weak_stable.DEFAULT_N)), samples=int(prm.get("samples", 1000)), seed=m.seed,
        cap=int(prm.get("cap", weak_stable.POPULATION_CAP)), min_samples=1)
    out = {"system": sys_.to_json(), "line": J.to_json(), "m": st.m_values, "p_hat": st.p_hat,
           "ci_low": st.ci_low, "ci_high": st.ci_high, "kappa": st.kappa, "kappa_ci": st.kappa_ci,
           "nonincreasing": st.nonincreasing, "flagged": st.flagged, "samples": st.samples,
           "delta": st.delta, "N": st.N}
    return Outcome(out, rows=st.rows(), summary=[("kappa", f"{st.kappa:.4g}"), ("flagged", st.flagged),
                                                 ("p_hat(m_max)", st.p_hat[-1])])


def _t_grid(spec) -> list:
    if isinstance(spec, int):
        return weak_stable.uniform_t_grid(spec)
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    return [parse_exact(str(s)) for s in spec]


def _weakmix(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    prm = m.params
    grid = _t_grid(prm.get("t_grid", 200))
    system = m.system.simplex() if m.system.gamma0 else None
    x0 = _lengths(prm.get("lambda"), p, RATIONAL)
    if x0 is None and weak_stable.ones_in_H(p):
        system = system or m.system.simplex()
        x0 = system.sample_array(sample_stream(m.seed, 0), 1)[0]
    res = weak_stable.weak_mixing_scan(x0, p, grid, int(prm.get("visits", 40)), system=system,
                                       tol=float(prm.get("tol", weak_stable.DEFAULT_TOL)),
                                       rng=sample_stream(m.seed, 1))
    rows = [{"t": str(r.t), "t_float": float(r.t), "visits_used": r.visits_used,
             "tail_max_distance": r.tail_max_distance, "verdict": r.verdict, "integral": r.integral}
            for r in res.rows]
    out = {"permutation": str(p), "short_circuited": res.short_circuited, "rows": rows,
           "candidates": [str(t) for t in res.candidates]}
    return Outcome(out, rows=rows, summary=[("grid size", len(rows)), ("candidates", len(res.candidates)),
                                            ("short-circuited", res.short_circuited)])


def _suspend(m: ExperimentManifest) -> Outcome:
    p = m.system.perm()
    arith = m.system.arithmetic()
    prm = m.params
    if prm.get("tau"):
        sd = suspension.SuspensionDatum.from_tau(p, [parse_exact(s) for s in prm["tau"].split(",")])
    else:
        sd = suspension.sample_tau(p, m.seed)
    lv = _lengths(prm.get("lambda"), p, arith)
    if lv is None:
        lv = _random_lengths(m.system.simplex(), m.seed, arith)
    rects = suspension.zippered_rectangles(lv, p, sd)
    out = {"datum": sd.to_json(), "lengths": lv.to_json(p.alphabet), "area": str(sd.area(lv)),
           "rectangles": suspension.rectangles_json(rects)}
    if prm.get("flow_time") is not None:
        flow = suspension.SpecialFlow.of(p, lv, [arith.number(h) for h in sd.heights])
        x, s = (arith.number(parse_exact(v)) for v in str(prm.get("flow_point", "0,0")).split(","))
        fp = suspension.special_flow_evaluate(flow, (x, s), arith.number(parse_exact(str(prm["flow_time"]))))
        out["flow"] = {"x": str(fp.x), "s": str(fp.s), "crossings": fp.crossings}
    rows = [{"letter": r.letter, "side": r.side, "x0": float(r.x0), "x1": float(r.x1),
             "y0": float(r.y0), "y1": float(r.y1)} for r in rects]
    return Outcome(out, rows=rows, summary=[("area", float(sd.area(lv))),
                                            ("heights", " ".join(f"{float(h):.4g}" for h in sd.heights))])


def _deviations(m: ExperimentManifest) -> Outcome:
    sys_ = m.system.simplex()
    prm = m.params
    n_grid = [int(n) for n in prm.get("n_grid", list(range(10, 81, 10)))]
    samples = int(prm.get("samples", 2000))
    est = lyapunov_spectrum(sys_, m.seed, int(prm.get("lyapunov_steps", 20000)))
    theta1 = est.exponents[0]
    out = {"system": sys_.to_json(), "theta1": theta1, "experiments": {}}
    rows, summary = [], [("theta1", f"{theta1:.4g}")]
    which = prm.get("which", "both")
    runs = []
    if which in ("both", "anomalous"):
        lt = float(prm.get("L_factor", 1.5)) * theta1
        runs.append(("anomalous", lt, anomalous_growth_experiment(sys_, lt, n_grid, samples, seed=m.seed)))
    if which in ("both", "contraction"):
        cp = float(prm.get("c_factor", 0.7)) * theta1
        runs.append(("contraction", cp, contraction_deviation_experiment(sys_, cp, n_grid, samples, seed=m.seed)))
    if not runs:
        raise InputError(f"unknown deviation experiment {which!r}")
    for name, thr, res in runs:
        out["experiments"][name] = {"threshold": thr, "slope": res.slope, "slope_ci": res.slope_ci,
                                    "intercept": res.intercept,
                                    "significantly_negative": res.significantly_negative,
                                    "rows": [asdict(r) for r in res.rows]}
        rows += [{"experiment": name, **asdict(r)} for r in res.rows]
        summary.append((f"{name} slope", f"{res.slope:.4g} CI ({res.slope_ci[0]:.4g}, {res.slope_ci[1]:.4g})"))
    return Outcome(out, rows=rows, summary=summary)


DISPATCH = {"perm-info": _perm_info, "rauzy-class": _rauzy_class, "induct": _induct, "orbit": _orbit,
            "lyapunov": _lyapunov, "survival": _survival, "weakmix-scan": _weakmix, "suspend": _suspend,
            "deviations": _deviations}


def run(manifest: ExperimentManifest, quiet: bool = False) -> dict:
    """Dispatch, validate, write outputs; returns the result document."""
    if manifest.kind not in DISPATCH:
        raise InputError(f"unknown experiment kind {manifest.kind!r}")
    if not 0 <= manifest.seed <= SEED_MAX:
        raise InputError("seed must be a 64-bit unsigned integer")
    outcome = DISPATCH[manifest.kind](manifest)
    doc = _jsonable({"kind": manifest.kind, "manifest": manifest.to_json(), "result": outcome.result})
    jsonschema.validate(doc, load_schema("result"))
    if manifest.outputs.get("json"):
        atomic_write(manifest.outputs["json"], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if manifest.outputs.get("csv"):
        atomic_write(manifest.outputs["csv"], csv_text(_jsonable(outcome.rows)))
    if not quiet:
        width = max((len(k) for k, _ in outcome.summary), default=0)
        for k, v in outcome.summary:
            print(f"{k:<{width}}  {v}")
    return doc


# --------------------------------------------------------------------------- argparse


def _common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--precision-bits", type=int, default=None)
    parser.add_argument("--mode", choices=("rational", "float"), default="rational")
    parser.add_argument("--gamma0", default=None, help="comma-separated top/bottom arrows of the base loop")
    parser.add_argument("--out", default=None, help="JSON result path")
    parser.add_argument("--csv", default=None, help="CSV table path")
    parser.add_argument("--save-manifest", default=None, help="write the manifest that was run")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rauzylab", description="Interval exchanges and the Rauzy cocycle.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment manifest")
    r.add_argument("manifest")
    r.add_argument("--quiet", action="store_true")

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("permutation", help='e.g. "a b c / c b a"')
        _common(s)
        return s

    cmd("perm-info", "genus, singularities, H(pi)")
    s = cmd("rauzy-class", "enumerate the Rauzy class")
    s.add_argument("--cap", type=int, default=rauzy.CLASS_CAP)
    s = cmd("induct", "single induction steps with a trace")
    s.add_argument("--lambda", dest="lam", required=True)
    s.add_argument("--steps", type=int, default=1)
    s = cmd("orbit", "long induction orbit")
    s.add_argument("--lambda", dest="lam", default=None)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--no-renormalize", action="store_true")
    s = cmd("lyapunov", "Lyapunov spectrum on H(pi)")
    s.add_argument("--steps", type=int, default=10**4)
    s.add_argument("--batches", type=int, default=50)
    s = cmd("survival", "Monte Carlo survival of the children process")
    s.add_argument("--delta", type=float, default=weak_stable.DEFAULT_DELTA)
    s.add_argument("--N", type=int, default=weak_stable.DEFAULT_N)
    s.add_argument("--m-max", type=int, default=20)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--line-norm", type=float, default=0.02)
    s.add_argument("--cap", type=int, default=weak_stable.POPULATION_CAP)
    s = cmd("weakmix-scan", "Veech criterion over a t grid")
    s.add_argument("--lambda", dest="lam", default=None)
    s.add_argument("--t-grid", default="200", help="grid size n, or comma-separated values")
    s.add_argument("--visits", type=int, default=40)
    s.add_argument("--tol", type=float, default=weak_stable.DEFAULT_TOL)
    s = cmd("suspend", "suspension datum, rectangles, special flow")
    s.add_argument("--lambda", dest="lam", default=None)
    s.add_argument("--tau", default=None)
    s.add_argument("--flow-time", default=None)
    s.add_argument("--flow-point", default="0,0")
    s = cmd("deviations", "large-deviation experiments")
    s.add_argument("--which", choices=("both", "anomalous", "contraction"), default="both")
    s.add_argument("--n-grid", default="10,20,30,40,50,60,70,80")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--lyapunov-steps", type=int, default=20000)
    s.add_argument("--L-factor", type=float, default=1.5)
    s.add_argument("--c-factor", type=float, default=0.7)
    return ap


def manifest_from_args(args) -> ExperimentManifest:
    c = args.command
    params: dict = {}
    if c == "rauzy-class":
        params = {"cap": args.cap}
    elif c == "induct":
        params = {"lambda": args.lam, "steps": args.steps}
    elif c == "orbit":
        params = {"lambda": args.lam, "steps": args.steps, "renormalize": not args.no_renormalize}
    elif c == "lyapunov":
        params = {"steps": args.steps, "batches": args.batches}
    elif c == "survival":
        params = {"delta": args.delta, "N": args.N, "m_max": args.m_max, "samples": args.samples,
                  "line_norm": args.line_norm, "cap": args.cap}
    elif c == "weakmix-scan":
        grid = int(args.t_grid) if args.t_grid.strip().isdigit() else args.t_grid
        params = {"lambda": args.lam, "t_grid": grid, "visits": args.visits, "tol": args.tol}
    elif c == "suspend":
        params = {"lambda": args.lam, "tau": args.tau, "flow_time": args.flow_time, "flow_point": args.flow_point}
    elif c == "deviations":
        params = {"which": args.which, "n_grid": [int(n) for n in args.n_grid.split(",")],
                  "samples": args.samples, "lyapunov_steps": args.lyapunov_steps,
                  "L_factor": args.L_factor, "c_factor": args.c_factor}
    gamma0 = [k.strip() for k in args.gamma0.split(",")] if args.gamma0 else None
    system = SystemSpec(args.permutation, gamma0, args.mode, args.precision_bits or default_precision())
    outputs = {k: v for k, v in (("json", args.out), ("csv", args.csv)) if v}
    return ExperimentManifest(system, c, params, args.seed, outputs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            manifest = ExperimentManifest.load(args.manifest)
            run(manifest, quiet=args.quiet)
        else:
            manifest = manifest_from_args(args)
            if args.save_manifest:
                atomic_write(args.save_manifest, manifest.dumps())
            run(manifest)
    except InputError as exc:
        print(f"rauzylab {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CapExceededError as exc:
        print(f"rauzylab {args.command}: cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except PrecisionError as exc:
        print(f"rauzylab {args.command}: precision error: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    except RauzyLabError as exc:
        print(f"rauzylab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
