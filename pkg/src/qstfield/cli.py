"""Command-line front end: propagator values and tables, verification suites,
scenario runs and graph dumps.

Exit codes: 0 success, 1 failed verification, 2 usage or scenario parse
errors, 3 domain or guard violations, 4 numerical failures.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import asdict

import jsonschema
import numpy as np

from . import functionals as fn
from . import perturbation as pt
from . import propagators as pr
from . import states as st
from .model import CutoffSpec, DomainError, Event, ModelParams, ParameterError, PlaneWaveConfig, gaussian_kernel

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DOMAIN, EXIT_NUMERIC = 0, 1, 2, 3, 4

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["model", "interaction", "cutoffs", "observable", "order"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "required": ["m", "lambda"], "additionalProperties": False,
            "properties": {"m": {"type": "number", "exclusiveMinimum": 0},
                           "lambda": {"type": "number", "exclusiveMinimum": 0}},
        },
        "interaction": {
            "type": "object", "required": ["n"], "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 2}, "coupling": {"type": "number"}},
        },
        "cutoffs": {
            "type": "object", "required": ["eps", "T", "R", "delta"], "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in ("eps", "T", "R", "delta")},
        },
        "observable": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object", "required": ["t", "power"], "additionalProperties": False,
                "properties": {
                    "t": {"type": "number"},
                    "x": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    "power": {"type": "integer", "minimum": 1},
                    "weight": {"type": "object", "required": ["re", "im"], "additionalProperties": False,
                               "properties": {"re": {"type": "number"}, "im": {"type": "number"}}},
                },
            },
        },
        "order": {"type": "integer", "minimum": 0, "maximum": 4},
        "state": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"enum": ["vacuum", "thermal"]}, "beta": {"type": "number"}},
        },
        "quadrature": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "nodes": {"type": "integer"}, "p_max_sigmas": {"type": "number"},
                "mc_samples": {"type": "integer"}, "seed": {"type": "integer", "minimum": 0,
                                                            "maximum": 2**64 - 1},
                "oracle_nodes": {"type": "integer"}, "shell_width": {"type": "number"},
                "tensor_nodes": {"type": "integer"}, "panel_width": {"type": "number"},
            },
        },
        "method": {"enum": ["mc", "tensor"]},
        "truncation": {"type": "integer", "minimum": 0, "maximum": 1},
        "scan": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "array", "items": {"type": "number"}, "minItems": 1}
                           for k in ("radii", "betas", "times")},
        },
    },
}


class UsageError(Exception):
    """Scenario or flag problem mapped to exit code 2."""


def _fmt(x: float) -> str:
    """Scientific format with an unpadded exponent, e.g. ``1.250000e-3``."""
    if x == 0:
        return "0.000000e0"
    mant, exp = f"{x:.6e}".split("e")
    return f"{mant}e{int(exp)}"


def _threads() -> int:
    raw = os.environ.get("QSTFIELD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"QSTFIELD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("QSTFIELD_THREADS must be a positive integer")
    return n


def _write(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- propagator

def _axis(spec: str):
    if ":" in spec:
        lo, hi, n = spec.split(":")
        return list(np.linspace(float(lo), float(hi), int(n)))
    return [float(v) for v in spec.split(";")]


def _parse_table(grid: str, defaults: dict) -> dict:
    axes = {k: [v] for k, v in defaults.items()}
    for part in grid.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, values = part.partition("=")
        if name not in axes or not values:
            raise UsageError(f"bad table axis {part!r}; expected t=, u= or r= with start:stop:count")
        try:
            axes[name] = _axis(values)
        except ValueError as exc:
            raise UsageError(f"bad table axis {part!r}: {exc}") from None
    return axes


def cmd_propagator(args) -> int:
    params = ModelParams(args.m, args.lam)
    kind = pr.PropagatorKind.parse(args.kind, args.beta)
    if args.table:
        axes = _parse_table(args.table, {"t": args.t, "u": args.u, "r": args.r})
        rows = pr.tabulate(kind, params, axes["t"], axes["u"], axes["r"])
        _write(pr.rows_to_csv(rows), args.out)
        return EXIT_OK
    v = pr.eval(kind, params, args.t, args.u, args.r)
    _write(f"{_fmt(v.real)} {_fmt(v.imag)}\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- verify

def _check(name: str, anchor: str, residual: float, threshold: float, scale: float) -> dict:
    thr = threshold * scale
    return {"name": name, "anchor": anchor, "residual": float(residual), "threshold": thr,
            "passed": bool(np.isfinite(residual) and residual <= thr)}


def _suite_propagators(scale: float, seed: int) -> list[dict]:
    out = []
    rng = np.random.default_rng(seed)
    for lam in (0.5, 1.0):
        p = ModelParams(1.0, lam)
        t = rng.uniform(-3, 3, 200)
        r = rng.uniform(0, 3, 200)
        plus = pr.PropagatorKind.parse("wightman-plus")
        pj = pr.PropagatorKind.parse("pauli-jordan")
        lhs = pr.evaluate_array(plus, p, t, 0, r) - pr.evaluate_array(plus, p, -t, 0, r)
        rhs = 1j * pr.evaluate_array(pj, p, t, 0, r)
        out.append(_check(f"exchange-relation[lam={lam}]", "D+(x) - D+(-x) = i Delta(x)",
                          np.max(np.abs(lhs - rhs)), 1e-10, scale))
        eq = np.abs(pr.evaluate_array(pj, p, np.zeros(20), 0, np.linspace(0, 3, 20)))
        out.append(_check(f"pauli-jordan-equal-time[lam={lam}]", "Delta vanishes at equal times",
                          float(eq.max()), 1e-10, scale))
        h = 1e-3 * lam
        vals = pr.evaluate_array(pj, p, np.array([-2 * h, -h, h, 2 * h]), 0, np.zeros(4))
        deriv = float(np.real(np.array([1, -8, 8, -1]) @ vals / (12 * h)))
        target = 2 * math.sqrt(2 * math.pi) * lam * gaussian_kernel(np.zeros(4), 2 * lam) * math.exp(-(lam**2))
        out.append(_check(f"pauli-jordan-slope-magnitude[lam={lam}]",
                          "|d_t Delta(0,0)| = 2 sqrt(2 pi) lam G_2lam(0) exp(-lam^2 m^2)",
                          abs(abs(deriv) - target) / target, 1e-6, scale))
        res = max(pr.equation_of_motion_residual(p, tt, rr) for tt, rr in ((0.3, 0.7), (1.2, 0.4), (-0.8, 1.5)))
        out.append(_check(f"equation-of-motion[lam={lam}]", "(box - m^2) D+ = 0", res, 1e-3, scale))
        bound = pr.wightman_bound(p)
        feyn = pr.PropagatorKind.parse("feynman")
        mags = np.concatenate([np.abs(pr.evaluate_array(plus, p, t, 0, r)), np.abs(pr.evaluate_array(feyn, p, t, 0, r))])
        out.append(_check(f"boundedness[lam={lam}]", "|D+|, |D_F| <= D+(0)", max(0.0, mags.max() - bound), 1e-12, scale))
        adv = pr.evaluate_array(pr.PropagatorKind.parse("advanced"), p, np.abs(t) + 1e-3, 0, r)
        ret = pr.evaluate_array(pr.PropagatorKind.parse("retarded"), p, -np.abs(t) - 1e-3, 0, r)
        out.append(_check(f"causal-support[lam={lam}]", "advanced vanishes for t > 0, retarded for t < 0",
                          float(max(np.abs(adv).max(), np.abs(ret).max())), 0.0, scale))
        beta = 3.0
        th = pr.PropagatorKind.parse("thermal", beta)
        kms = np.abs(pr.evaluate_array(th, p, t[:50], np.full(50, beta), r[:50])
                     - pr.evaluate_array(th, p, -t[:50], 0, r[:50]))
        out.append(_check(f"kms-identity[lam={lam}]", "D_beta(t - i beta) = D_beta(-t)", float(kms.max()), 1e-9, scale))
        rate = pr.decay_fit("thermal-minus-vacuum", p, "beta", (2.0, 8.0))
        out.append(_check(f"thermal-gap-rate[lam={lam}]", "|D_beta - D+| <= C exp(-beta m)", rate + 0.9, 0.0, 1.0))
        cache = pr.PropagatorCache(p)
        tq = cache.quantize(t[:40]) * cache.quantum
        rq = cache.quantize(r[:40]) * cache.quantum
        cached = cache.get_many(plus, tq, np.zeros(40), rq)
        direct = pr.evaluate_array(plus, p, tq, np.zeros(40), rq)
        out.append(_check(f"cache-transparency[lam={lam}]", "cached values equal direct values",
                          float(np.max(np.abs(cached - direct))), 0.0, 1.0))
    return out


def _random_monomial(rng, events, max_degree):
    k = int(rng.integers(1, 3))
    idx = rng.choice(len(events), size=k, replace=False)
    powers = rng.integers(1, max_degree + 1, size=k)
    while powers.sum() > max_degree:
        powers[np.argmax(powers)] -= 1
    return fn.monomial([(events[i], int(pw)) for i, pw in zip(idx, powers) if pw > 0],
                       complex(rng.normal(), rng.normal()))


def _suite_algebra(scale: float, seed: int) -> list[dict]:
    out = []
    rng = np.random.default_rng(seed)
    mism = 0
    for pa in ([1], [2], [3], [1, 1], [2, 1], [2, 2], [3, 1]):
        for pb in ([1], [2], [4], [1, 2], [2, 2], [1, 1, 1]):
            if sum(pa) + sum(pb) > 8:
                continue
            ea = [Event(0.1 * i, (i, 0, 0)) for i in range(len(pa))]
            eb = [Event(-0.3 - 0.1 * j, (0, j + 1, 0)) for j in range(len(pb))]
            prod = fn.star_product(fn.monomial(list(zip(ea, pa))), fn.monomial(list(zip(eb, pb))))
            oracle = fn.brute_force_contraction_counts(pa, pb)
            got = {}
            for term in prod.terms:
                pos = [v.position.event for v in term.vertices]
                key = frozenset((ea.index(pos[e.i]), eb.index(pos[e.j]), e.mult) for e in term.edges)
                got[key] = got.get(key, 0) + term.coefficient
            mism += sum(1 for k in oracle if got.get(k) != oracle[k]) + len(set(got) - set(oracle))
    out.append(_check("wick-oracle", "star-product multiplicities equal labeled leg matchings", mism, 0, 1.0))
    x, y = Event(0.3, (0.1, 0, 0)), Event(-0.2, (0, 0.4, 0))
    prod = fn.star_product(fn.field_at(x, 2), fn.field_at(y, 2))
    pattern = sorted(int(t.coefficient.real) for t in prod.terms)
    out.append(_check("phi2-star-phi2", "phi^2 * phi^2 = phi^2 phi^2 + 4 H phi phi + 2 H^2",
                      0 if pattern == [1, 2, 4] else 1, 0, 1.0))
    events = [Event(float(rng.uniform(-1, 1)), tuple(rng.uniform(-1, 1, 3))) for _ in range(4)]
    worst = 0
    for _ in range(5):
        a, b, c = (_random_monomial(rng, events, 3) for _ in range(3))
        lhs = fn.star_product(fn.star_product(a, b), c)
        rhs = fn.star_product(a, fn.star_product(b, c))
        worst = max(worst, 0 if lhs.structurally_equal(rhs, 1e-12) else 1)
        inv = fn.involution(fn.star_product(a, b))
        worst = max(worst, 0 if inv.structurally_equal(fn.star_product(fn.involution(b), fn.involution(a)), 1e-12) else 1)
    out.append(_check("associativity-and-involution", "(AB)C = A(BC), (AB)* = B*A*", worst, 0, 1.0))
    p = ModelParams(1.0, 1.0)
    late = fn.monomial([(Event(2.0, (0.2, 0, 0)), 2), (Event(1.6, (0, 0.3, 0)), 1)])
    early = fn.monomial([(Event(0.0), 2), (Event(-0.4, (0.1, 0.1, 0)), 1)])
    cfg = PlaneWaveConfig((0.4 + 0.2j,), ((0.3, 0.2, -0.1, 0.5),))
    diff = fn.evaluate(fn.time_ordered_product(late, early) - fn.star_product(late, early), cfg, p)
    ref = abs(fn.evaluate(fn.star_product(late, early), cfg, p))
    out.append(_check("temporal-factorization", "A .T B = A * B when A is later than B",
                      abs(diff) / ref, 1e-12, scale))
    once = fn.Functional.from_terms(prod.terms)
    out.append(_check("canonical-idempotence", "canonical(canonical(A)) = canonical(A)",
                      0 if once == fn.Functional.from_terms(once.terms) else 1, 0, 1.0))
    fields = [fn.field_at(e) for e in events[:3]]
    c3 = fn.connected_correlator("vacuum", fields, p)
    out.append(_check("connected-three-point", "quasi-free truncated 3-point function vanishes", abs(c3), 1e-12, scale))
    return out


def _lattice_interaction(n, cutoffs, times, points=((0.0, 0.0, 0.0), (0.3, 0.0, 0.0)), cell=0.1):
    return pt.Interaction(n, cutoffs, lattice=pt.Lattice(tuple(times), points, cell))


def _probe_residual(f, probes, p, parts):
    num = max(abs(fn.evaluate(f, cfg, p)) for cfg in probes)
    den = max(sum(abs(fn.evaluate(g, cfg, p)) for g in parts) for cfg in probes)
    return num / den if den else num


def _probes(seed):
    rng = np.random.default_rng(seed)
    return [PlaneWaveConfig(tuple(complex(*rng.normal(size=2)) * 0.5 for _ in range(2)),
                            tuple(tuple(rng.normal(size=4)) for _ in range(2))) for _ in range(2)]


def _suite_smatrix(scale: float, seed: int) -> list[dict]:
    out = []
    p = ModelParams(1.0, 1.0)
    probes = _probes(seed)
    c = CutoffSpec(0.2, 0.2, 1.0, 0.5)
    times = [-0.4 + 0.1 * i for i in range(8)]
    for n in (3, 4):
        V = _lattice_interaction(n, c, times)
        S = pt.s_matrix(V, 2)
        Sd = S.involution()
        prod = S.star(Sd)
        res = max(_probe_residual(prod[k], probes, p, [S[k], Sd[k]]) for k in (1, 2))
        out.append(_check(f"unitarity-order-2[n={n}]", "S * S^* = 1 order by order", res, 1e-10, scale))
        Si = pt.s_inverse(S)
        same = fn.resolve_time_order(Si[2]).structurally_equal(fn.resolve_time_order(Sd[2]), 1e-12)
        out.append(_check(f"inverse-equals-adjoint[n={n}]", "S^{-1} = S^* coefficient by coefficient at order 2",
                          0 if same else 1, 0, 1.0))
    a = fn.monomial([(Event(1.0, (0.1, 0, 0)), 3)], 0.3)
    b = fn.monomial([(Event(0.5), 3)], 0.2)
    cc = fn.monomial([(Event(0.0, (0, 0.2, 0)), 3)], 0.25)
    lhs = pt.s_matrix(a + b + cc, 2)
    rhs = pt.s_matrix(a + b, 2).star(pt.s_inverse(pt.s_matrix(b, 2))).star(pt.s_matrix(b + cc, 2))
    res = max(_probe_residual(lhs[k] - rhs[k], probes, p, [lhs[k], rhs[k]]) for k in (1, 2))
    out.append(_check("temporal-factorization-of-S", "S(A+B+C) = S(A+B) S(B)^{-1} S(B+C)", res, 1e-8, scale))
    x, y = Event(-0.7, (0.2, 0.1, 0)), Event(0.0, (0, 0, 0.3))
    R = pt.bogoliubov(fn.field_at(x, 2), fn.field_at(y), 1)
    one = PlaneWaveConfig((1.0,), ((0.0, 0.0, 0.0, 0.0),))
    adv = pr.eval(pr.PropagatorKind.parse("advanced"), p, x.t - y.t, 0, float(np.linalg.norm(np.subtract(x.x, y.x))))
    res = abs(fn.evaluate(R[1], one, p) - 2 * adv) / abs(adv)
    out.append(_check("bogoliubov-first-order", "R_V(phi(y)) = 2 Delta_A(x - y) phi(x) at first order", res, 1e-12, scale))
    try:
        pt.bogoliubov(pt.Interaction(4, CutoffSpec(0.5, 0.5, 1.0, 0.5)), fn.monomial([(Event(0.0), 2)]), 2)
        flag = 0
    except fn.StructureError:
        flag = 1
    out.append(_check("bogoliubov-connected-components", "every component touches the observable", flag, 0, 1.0))
    A = fn.monomial([(Event(0.05), 2)])
    V3 = _lattice_interaction(3, c, times)
    back = pt.bogoliubov_inverse(V3, pt.bogoliubov(V3, A, 2, check=False), 2)
    res = max(_probe_residual(back[k] - (A if k == 0 else fn.Functional()), probes, p, [A]) for k in range(3))
    out.append(_check("bogoliubov-inverse", "R^{-1}(R(A)) = A", res, 1e-10, scale))
    cz = CutoffSpec(0.2, 1.4, 1.0, 0.5)
    lat = [round(-0.4 + 0.1 * i, 10) for i in range(40)]
    Vc = _lattice_interaction(3, cz, lat, points=((0.0, 0.0, 0.0),))
    t1, s1 = 0.4, 0.7
    lhs = pt.cocycle(Vc, t1 + s1, 2)
    rhs = pt.cocycle(Vc, t1, 2).star(pt.alpha(pt.cocycle(Vc, s1, 2), t1))
    res = max(_probe_residual(lhs[k] - rhs[k], probes, p, [lhs[k], rhs[k]]) for k in (1, 2))
    out.append(_check("cocycle-identity", "U(t+s) = U(t) * alpha_t U(s)", res, 1e-8, scale))
    full = pt.s_matrix(V3, 3).truncate(2)
    direct = pt.s_matrix(V3, 2)
    out.append(_check("truncation-consistency", "truncating an order-3 series equals computing to order 2",
                      0 if all(full[k].structurally_equal(direct[k], 1e-12) for k in range(3)) else 1, 0, 1.0))
    return out


def _suite_states(scale: float, seed: int) -> list[dict]:
    out = []
    spec = pr.QuadratureSpec(mc_samples=2000, seed=seed)
    val, err = st.exponential_tree_bound(1.0, spec)
    exact = 8 * math.pi
    out.append(_check("exponential-tree-bound", "int exp(-m|x|) d^3x = 8 pi / m^3",
                      abs(val - exact) / (2 * err), 1.0, scale))
    out.append(_check("exponential-tree-bound-precision", "relative MC error <= 1%", err / val, 0.01, scale))
    p = ModelParams(1.0, 0.5)
    c = CutoffSpec(0.5, 0.5, 2.0, 0.5)
    R = pt.bogoliubov(pt.Interaction(3, c), fn.monomial([(Event(0.0), 3)]), 1)
    mspec = pr.QuadratureSpec(mc_samples=400, seed=seed)
    mc, err = st.expectation(st.VACUUM, R, 1, p, mspec, c, "mc")
    te, _ = st.expectation(st.VACUUM, R, 1, p, mspec, c, "tensor")
    out.append(_check("mc-tensor-agreement", "|mc - tensor| <= 3 stderr", abs(mc - te) / (3 * err), 1.0, scale))
    R4 = pt.bogoliubov(pt.Interaction(4, c), fn.monomial([(Event(0.0), 2)]), 1)
    zero, _ = st.expectation(st.VACUUM, R4, 1, p, mspec, c, "mc")
    out.append(_check("degenerate-observable", "phi^4 interaction, phi^2 observable, first order: 0",
                      abs(zero), 0.0, 1.0))
    beta = 2.0
    x, y = Event(0.4, (0.2, 0, 0)), Event(-0.1, (0, 0.3, 0))
    th = st.StateSpec.thermal(beta)
    lhs, _ = st.expectation(th, fn.star_product(fn.translate(fn.field_at(x), 0.0, beta), fn.field_at(y)), 0, p)
    rhs, _ = st.expectation(th, fn.star_product(fn.field_at(y), fn.field_at(x)), 0, p)
    out.append(_check("kms-two-point", "omega_beta(phi(x) alpha_{i beta} phi(y)) = omega_beta(phi(y) phi(x))",
                      abs(lhs - rhs), 1e-9, scale))
    r = float(np.linalg.norm(np.subtract(x.x, y.x)))
    direct = pr.eval(pr.PropagatorKind.parse("thermal", beta), p, x.t - y.t, 0, r)
    two, _ = st.expectation(th, fn.star_product(fn.field_at(x), fn.field_at(y)), 0, p)
    # expectations go through the propagator cache, whose coordinate quantum is 1e-9
    out.append(_check("thermal-two-point", "omega_beta(phi(x) phi(y)) = D_beta(x - y)",
                      abs(two - direct) / abs(direct), 1e-8, scale))
    gaps = []
    betas = [4.0, 6.0, 8.0]
    vac, _ = st.expectation(st.VACUUM, R, 1, p, mspec, c, "tensor")
    for b in betas:
        v, _ = st.expectation(st.StateSpec.thermal(b), R, 1, p, mspec, c, "tensor")
        gaps.append(abs(v - vac))
    rate = float(np.polyfit(betas, np.log(gaps), 1)[0])
    out.append(_check("thermal-to-vacuum-rate", "|omega_beta - omega| <= C exp(-beta m)", rate + 0.9, 0.0, 1.0))
    return out


SUITES = {
    "propagators": _suite_propagators,
    "algebra": _suite_algebra,
    "smatrix": _suite_smatrix,
    "states": _suite_states,
}


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    checks = []
    for name in names:
        for c in SUITES[name](args.tol_scale, args.seed):
            c["suite"] = name
            checks.append(c)
    report = {"suite": args.suite, "seed": args.seed, "tol_scale": args.tol_scale,
              "passed": all(c["passed"] for c in checks), "checks": checks}
    _write(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK if report["passed"] else EXIT_FAILED


# ---------------------------------------------------------------- run

DEFAULTS = {
    "interaction": {"coupling": 1.0},
    "state": {"kind": "vacuum"},
    "method": "mc",
    "truncation": 1,
}


def load_scenario(path: str) -> dict:
    """Read, validate and fill defaults; raises UsageError on parse problems."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scenario {path!r}: {exc}") from None
    return resolve_scenario(raw)


def resolve_scenario(raw: dict) -> dict:
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"scenario does not match the schema: {exc.message}") from None
    sc = copy.deepcopy(raw)
    sc["interaction"] = {**DEFAULTS["interaction"], **sc["interaction"]}
    sc.setdefault("state", dict(DEFAULTS["state"]))
    sc.setdefault("method", DEFAULTS["method"])
    sc.setdefault("truncation", DEFAULTS["truncation"])
    sc["quadrature"] = asdict(pr.QuadratureSpec(**sc.get("quadrature", {})))
    for atom in sc["observable"]:
        atom.setdefault("x", [0.0, 0.0, 0.0])
        atom.setdefault("weight", {"re": 1.0, "im": 0.0})
    if sc["state"]["kind"] == "thermal" and "beta" not in sc["state"]:
        raise UsageError("thermal scenarios need state.beta")
    return sc


def _build(sc: dict):
    params = ModelParams(sc["model"]["m"], sc["model"]["lambda"])
    cutoffs = CutoffSpec(**sc["cutoffs"])
    spec = pr.QuadratureSpec(**sc["quadrature"])
    for atom in sc["observable"]:
        if not abs(atom["t"]) < cutoffs.eps:
            raise DomainError(f"slice constraint: observable atom at t={atom['t']} lies outside |t| < eps={cutoffs.eps}")
    A = fn.Functional()
    for atom in sc["observable"]:
        w = complex(atom["weight"]["re"], atom["weight"]["im"])
        A = A + fn.monomial([(Event(atom["t"], tuple(atom["x"])), atom["power"])], w)
    V = pt.Interaction(sc["interaction"]["n"], cutoffs, coupling=sc["interaction"]["coupling"])
    state = st.StateSpec.thermal(sc["state"]["beta"]) if sc["state"]["kind"] == "thermal" else st.VACUUM
    return params, cutoffs, spec, A, V, state


def _value_json(value: complex, stderr: float, sc: dict, mode: str) -> str:
    report = {"mode": mode, "value": {"re": value.real, "im": value.imag}, "stderr": stderr,
              "order": sc["order"], "seed": sc["quadrature"]["seed"], "scenario": sc}
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    params, cutoffs, spec, A, V, state = _build(sc)
    k, method = sc["order"], sc["method"]
    scan = sc.get("scan", {})
    if args.mode == "expect":
        R = pt.bogoliubov(V, A, k)
        val, err = st.expectation(state, R, k, params, spec, cutoffs, method)
        _write(_value_json(val, err, sc, args.mode), args.out)
    elif args.mode == "adiabatic-scan":
        if "radii" not in scan:
            raise UsageError("adiabatic-scan needs scan.radii")
        R = pt.bogoliubov(V, A, k)
        res = st.adiabatic_scan(state, R, k, scan["radii"], params, spec, cutoffs, method)
        _write(res.to_csv(), args.out)
    elif args.mode == "kms-scan":
        if "betas" not in scan:
            raise UsageError("kms-scan needs scan.betas")
        res = st.kms_scan(A, V, scan["betas"], params, k, sc["truncation"], spec, method)
        _write(res.to_csv(), args.out)
    elif args.mode == "interacting-kms":
        if state.kind != "thermal":
            raise UsageError("interacting-kms needs a thermal state")
        val, err = st.interacting_kms(A, V, state.beta, params, k, sc["truncation"], spec, cutoffs, method)
        _write(_value_json(val, err, sc, args.mode), args.out)
    elif args.mode == "evolve":
        times = scan.get("times")
        if not times:
            raise UsageError("evolve needs scan.times")
        R = pt.bogoliubov(V, A, k)
        res = st.ScanResult([float(t) for t in times], [], [], [])
        for t in times:
            val, err = st.time_evolution_expectation(state, R, V, t, params, 1, k, spec, cutoffs, method)
            res.estimates.append(val)
            res.stderrs.append(err)
            res.samples.append(0)
        _write(res.to_csv(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- graphs

def cmd_graphs(args) -> int:
    cutoffs = CutoffSpec(args.eps, args.eps, 1.0, 0.5)
    V = pt.Interaction(args.n, cutoffs)
    A = fn.monomial([(Event(0.0), args.observable_power)])
    if args.series == "s-matrix":
        series = pt.s_matrix(V, args.order)
    elif args.series == "bogoliubov":
        series = pt.bogoliubov(V, A, args.order)
    else:
        series = pt.generator(V, args.order)
    _write(json.dumps(pt.graphs(series), indent=2) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qstfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagator", help="evaluate or tabulate a propagator")
    p.add_argument("--kind", required=True, help=", ".join(v.value for v in pr.Variant))
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--u", type=float, default=0.0)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--beta", type=float)
    p.add_argument("--table", help="grid such as 't=0:2:5,r=0.5' (start:stop:count or ';'-separated values)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_propagator)

    v = sub.add_parser("verify", help="run an invariant suite and print a JSON report")
    v.add_argument("--suite", required=True, choices=[*SUITES, "all"])
    v.add_argument("--tol-scale", type=float, default=1.0)
    v.add_argument("--seed", type=int, default=pr.DEFAULT_SPEC.seed)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("run", help="evaluate a scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--mode", required=True, choices=["expect", "adiabatic-scan", "kms-scan", "interacting-kms", "evolve"])
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("graphs", help="dump contraction graphs of a series as JSON")
    g.add_argument("--series", choices=["s-matrix", "bogoliubov", "generator"], default="s-matrix")
    g.add_argument("--n", type=int, default=3)
    g.add_argument("--order", type=int, default=2)
    g.add_argument("--observable-power", type=int, default=1)
    g.add_argument("--eps", type=float, default=0.5)
    g.add_argument("--out")
    g.set_defaults(func=cmd_graphs)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads()
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qstfield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, fn.ComplexityError, fn.StructureError) as exc:
        print(f"qstfield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ParameterError as exc:
        print(f"qstfield: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (st.NumericError, FloatingPointError, OverflowError) as exc:
        print(f"qstfield: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
