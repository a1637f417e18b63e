"""Scenario-driven batch runner.

    sis bounds|perturb|reconstruct|localize|sweep --scenario FILE [--out DIR]
        [--seed N] [--window-doublings N]

A scenario file holds one JSON object, or ``{"scenarios": [...]}``.  Output
goes to ``DIR/report.jsonl`` (one record per line) and ``DIR/report.csv``
(columns scenario_id, pipeline, key, value, verdict).

Exit status: 0 all checks pass, 2 some check failed, 3 some check was
inconclusive (and none failed), 4 schema or IO error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .amalgam import (BSpline, GeneratorVector, PolyDecay, Tabulated, TruncatedGaussian,
                      w_norm_vector)
from .errors import SchemaError, SISError
from .localization import (check_Ws, cross_gram_decay, dual_cross_gram_decay, dual_decay_rate,
                           inverse_decay, multi_p_stability)
from .measure import Density, MeasureComponent, VecMeasure, moment
from .perturbation import (blur_measure, epsilon0_combined, epsilon0_generator, epsilon0_measure,
                           jitter_bound, nutshell_transfer, operator_distance, perturb_generator)
from .reconstruction import (ErrorBudget, FrameSystem, end_to_end_error, measured_distances,
                             reconstruct_normal, reconstruct_richardson)
from .sampling_op import (SamplingModel, TruncationWindow, apply, assemble, block_sum_norm,
                          export_triplets, mesh_constant, op_norm, separation,
                          stability_check, upper_bound_chain)
from .shift_space import dual_generator, gram_matrix, riesz_bounds

log = logging.getLogger("sis")

PIPELINES = ("bounds", "perturb", "reconstruct", "localize", "sweep")
PERTURBATION_KINDS = ("none", "jitter", "generator", "measure", "combined")
EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_SCHEMA = 0, 2, 3, 4
CSV_COLUMNS = ("scenario_id", "pipeline", "key", "value", "verdict")

DEFAULTS: dict = {
    "pipeline": "bounds",
    "seed": 0,
    "p": [2],
    "window": {"K": 16, "doublings": 3},
    "sampling": {"step": 1.0, "offset": 0.0, "jitter": 0.0},
    "perturbation": {"kind": "none", "sweep": [], "patterns": 10},
    "reconstruct": {"trials": 5},
    "localize": {"s": 2.0},
    "expect": {"stability": "stable"},
    "tolerances": {"relative": 0.02, "agreement": 1e-8, "recovery": 1e-7,
                   "contraction": 0.01, "quadrature": 1e-6},
    "export_operator": False,
}


# ---------------------------------------------------------------------------
# schema


def _req(obj, key, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _number(v, path, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    if integer and int(v) != v:
        raise SchemaError(path, "expected an integer")
    if not math.isfinite(v):
        raise SchemaError(path, "expected a finite number")
    if positive and not v > 0:
        raise SchemaError(path, "must be positive")
    if nonneg and v < 0:
        raise SchemaError(path, "must be nonnegative")
    return int(v) if integer else float(v)


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise SchemaError(f"{path}.{k}" if path else k, "unknown field")
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                raise SchemaError(f"{path}.{k}" if path else k, "expected an object")
            out[k] = _merge(defaults[k], v, f"{path}.{k}" if path else k)
        else:
            out[k] = v
    return out


_GENERATOR_FIELDS = {
    "bspline": {"order": (True, "int"), "scale": (False, "pos")},
    "gaussian": {"sigma": (True, "pos"), "radius": (True, "pos"), "center": (False, "num"),
                 "scale": (False, "pos")},
    "polydecay": {"s": (True, "pos"), "scale": (False, "pos"), "center": (False, "num")},
    "tabulated": {"h": (True, "pos"), "values": (True, "list"), "origin": (False, "num")},
}


def _check_fields(obj, allowed, path):
    for k in obj:
        if k != "kind" and k not in allowed:
            raise SchemaError(f"{path}.{k}", "unknown field")
    out = {}
    for k, (required, typ) in allowed.items():
        if k not in obj:
            if required:
                raise SchemaError(f"{path}.{k}", "missing required field")
            continue
        v, p = obj[k], f"{path}.{k}"
        if typ == "list":
            if not isinstance(v, list) or not v:
                raise SchemaError(p, "expected a nonempty list of numbers")
            out[k] = [_number(x, f"{p}[{i}]") for i, x in enumerate(v)]
        else:
            out[k] = _number(v, p, positive=typ == "pos", nonneg=typ == "int",
                             integer=typ == "int")
    return out


def _parse_generator(obj, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    kind = _req(obj, "kind", path)
    if kind not in _GENERATOR_FIELDS:
        raise SchemaError(f"{path}.kind",
                          f"unknown generator kind {kind!r}; expected one of "
                          + ", ".join(sorted(_GENERATOR_FIELDS)))
    fields = _check_fields(obj, _GENERATOR_FIELDS[kind], path)
    if kind == "polydecay" and fields["s"] <= 1:
        raise SchemaError(f"{path}.s", "must exceed the dimension (1)")
    return {"kind": kind, **fields}


def _parse_measure(obj, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    for k in obj:
        if k not in ("atoms", "density"):
            raise SchemaError(f"{path}.{k}", "unknown field")
    atoms = []
    for i, a in enumerate(obj.get("atoms", [])):
        p = f"{path}.atoms[{i}]"
        if not isinstance(a, dict):
            raise SchemaError(p, "expected an object")
        for k in a:
            if k not in ("at", "weight", "weight_im"):
                raise SchemaError(f"{p}.{k}", "unknown field")
        atoms.append({"at": _number(_req(a, "at", p), f"{p}.at"),
                      "weight": _number(a.get("weight", 1.0), f"{p}.weight"),
                      "weight_im": _number(a.get("weight_im", 0.0), f"{p}.weight_im")})
    out = {"atoms": atoms}
    if "density" in obj:
        d, p = obj["density"], f"{path}.density"
        out["density"] = _check_fields(d, {"h": (True, "pos"), "values": (True, "list"),
                                           "origin": (False, "num")}, p)
    return out


def parse_scenario_obj(obj: Any, index: int = 0) -> dict:
    """Validate one scenario object and fill every default."""
    if not isinstance(obj, dict):
        raise SchemaError(f"scenarios[{index}]", "expected an object")
    sid = _req(obj, "id", "")
    if not isinstance(sid, str) or not sid:
        raise SchemaError("id", "expected a nonempty string")
    model = _req(obj, "model", "")
    if not isinstance(model, dict):
        raise SchemaError("model", "expected an object")
    for k in model:
        if k not in ("generator", "measure"):
            raise SchemaError(f"model.{k}", "unknown field")
    gens = _req(model, "generator", "model")
    meas = _req(model, "measure", "model")
    if not isinstance(gens, list) or not gens:
        raise SchemaError("model.generator", "expected a nonempty list")
    if not isinstance(meas, list) or not meas:
        raise SchemaError("model.measure", "expected a nonempty list")
    rest = {k: v for k, v in obj.items() if k not in ("id", "model")}
    sc = _merge(DEFAULTS, rest, "")
    sc["id"] = sid
    sc["model"] = {
        "generator": [_parse_generator(g, f"model.generator[{i}]") for i, g in enumerate(gens)],
        "measure": [_parse_measure(m, f"model.measure[{i}]") for i, m in enumerate(meas)],
    }
    if sc["pipeline"] not in PIPELINES:
        raise SchemaError("pipeline", f"expected one of {', '.join(PIPELINES)}")
    sc["seed"] = _number(sc["seed"], "seed", nonneg=True, integer=True)
    if not isinstance(sc["p"], list) or not sc["p"]:
        raise SchemaError("p", "expected a nonempty list")
    ps = []
    for i, p in enumerate(sc["p"]):
        if p in ("inf", "Infinity"):
            ps.append("inf")
        elif p in (1, 2):
            ps.append(int(p))
        else:
            raise SchemaError(f"p[{i}]", "expected 1, 2 or \"inf\"")
    sc["p"] = ps
    w = sc["window"]
    w["K"] = _number(w["K"], "window.K", positive=True, integer=True)
    w["doublings"] = _number(w["doublings"], "window.doublings", nonneg=True, integer=True)
    s = sc["sampling"]
    s["step"] = _number(s["step"], "sampling.step", positive=True)
    s["offset"] = _number(s["offset"], "sampling.offset")
    s["jitter"] = _number(s["jitter"], "sampling.jitter", nonneg=True)
    pert = sc["perturbation"]
    if pert["kind"] not in PERTURBATION_KINDS:
        raise SchemaError("perturbation.kind", f"expected one of {', '.join(PERTURBATION_KINDS)}")
    if not isinstance(pert["sweep"], list):
        raise SchemaError("perturbation.sweep", "expected a list")
    pert["sweep"] = [_number(v, f"perturbation.sweep[{i}]", positive=True)
                     for i, v in enumerate(pert["sweep"])]
    pert["patterns"] = _number(pert["patterns"], "perturbation.patterns", positive=True,
                               integer=True)
    sc["reconstruct"]["trials"] = _number(sc["reconstruct"]["trials"], "reconstruct.trials",
                                          positive=True, integer=True)
    sc["localize"]["s"] = _number(sc["localize"]["s"], "localize.s", positive=True)
    if sc["expect"]["stability"] not in ("stable", "unstable"):
        raise SchemaError("expect.stability", "expected \"stable\" or \"unstable\"")
    for k, v in sc["tolerances"].items():
        sc["tolerances"][k] = _number(v, f"tolerances.{k}", nonneg=True)
    if not isinstance(sc["export_operator"], bool):
        raise SchemaError("export_operator", "expected true or false")
    return sc


def parse_scenario(path) -> list:
    """Read a scenario file; returns a list of resolved scenarios."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc.msg} at line {exc.lineno}") from exc
    if isinstance(obj, dict) and "scenarios" in obj:
        if set(obj) != {"scenarios"} or not isinstance(obj["scenarios"], list):
            raise SchemaError("scenarios", "expected only a list of scenarios")
        items = obj["scenarios"]
    else:
        items = [obj]
    out = []
    for i, item in enumerate(items):
        try:
            out.append(parse_scenario_obj(item, i))
        except SchemaError as exc:
            prefix = f"scenarios[{i}]" if len(items) > 1 or "scenarios" in obj else ""
            if prefix:
                raise SchemaError(f"{prefix}.{exc.path}" if exc.path else prefix,
                                  exc.message) from exc
            raise
    ids = [s["id"] for s in out]
    if len(set(ids)) != len(ids):
        raise SchemaError("id", "scenario ids must be unique")
    return out


# ---------------------------------------------------------------------------
# model construction


def build_generator(spec: dict):
    kind = spec["kind"]
    if kind == "bspline":
        return BSpline(spec["order"], scale=spec.get("scale", 1.0))
    if kind == "gaussian":
        return TruncatedGaussian(spec["sigma"], spec["radius"], spec.get("center", 0.0),
                                 spec.get("scale", 1.0))
    if kind == "polydecay":
        return PolyDecay(spec["s"], spec.get("scale", 1.0), spec.get("center", 0.0))
    return Tabulated(spec["h"], np.array(spec["values"]), spec.get("origin", 0.0))


def build_measure(spec: dict) -> MeasureComponent:
    atoms = spec["atoms"]
    locs = [a["at"] for a in atoms]
    ws = [complex(a["weight"], a["weight_im"]) for a in atoms]
    m = MeasureComponent(np.array(locs, dtype=float), np.array(ws, dtype=complex))
    if "density" in spec:
        d = spec["density"]
        m = m.with_density(Density(d["h"], np.array(d["values"]), d.get("origin", 0.0)))
    return m


def build_model(sc: dict, seed: int) -> SamplingModel:
    phi = GeneratorVector([build_generator(g) for g in sc["model"]["generator"]])
    mu = VecMeasure([build_measure(m) for m in sc["model"]["measure"]])
    s = sc["sampling"]
    return SamplingModel(phi, mu, s["step"], s["offset"], s["jitter"], seed)


# ---------------------------------------------------------------------------
# records


@dataclass
class ReportRecord:
    scenario_id: str
    pipeline: str
    key: str
    value: Any = None
    verdict: str = ""
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    relation: str = ""
    norm: str = ""
    detail: Any = None

    def as_json(self) -> dict:
        out = {"scenario_id": self.scenario_id, "pipeline": self.pipeline, "key": self.key,
               "value": _jsonable(self.value), "verdict": self.verdict}
        if self.relation:
            out.update(lhs=_jsonable(self.lhs), rhs=_jsonable(self.rhs), relation=self.relation)
        if self.norm:
            out["norm"] = self.norm
        if self.detail is not None:
            out["detail"] = _jsonable(self.detail)
        return out


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, complex):
        return _jsonable(v.real) if v.imag == 0 else [_jsonable(v.real), _jsonable(v.imag)]
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def format_value(v) -> str:
    """CSV cell: 17 significant digits for numbers, blank for missing values."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Recorder:
    """Collects records for one scenario and pipeline."""

    def __init__(self, sid: str, pipeline: str, rel_tol: float):
        self.sid, self.pipeline, self.rel_tol = sid, pipeline, rel_tol
        self.records: list[ReportRecord] = []

    def value(self, key, value, norm="", detail=None):
        self.records.append(ReportRecord(self.sid, self.pipeline, key, value, "", norm=norm,
                                         detail=detail))

    def check(self, key, lhs, rhs, relation="<=", slack=None, norm="", value=None):
        """Verdict for ``lhs relation rhs`` with a relative (or absolute) slack."""
        lhs, rhs = float(lhs), float(rhs)
        tol = self.rel_tol * abs(rhs) if slack is None else slack
        if relation == "<=":
            ok = lhs <= rhs + tol
        elif relation == ">=":
            ok = lhs >= rhs - tol
        elif relation == "<":
            ok = lhs < rhs
        else:
            raise ValueError(relation)
        self.records.append(ReportRecord(self.sid, self.pipeline, key,
                                         lhs if value is None else value,
                                         "pass" if ok else "fail", lhs, rhs, relation, norm))
        return ok

    def verdict(self, key, value, verdict, lhs=None, rhs=None, relation="", norm="",
                detail=None):
        self.records.append(ReportRecord(self.sid, self.pipeline, key, value, verdict, lhs, rhs,
                                         relation, norm, detail))

    def error(self, key, exc):
        self.records.append(ReportRecord(self.sid, self.pipeline, key, None, "fail",
                                         detail=f"{type(exc).__name__}: {exc}"))


def _tag(eps) -> str:
    """Sweep-point suffix for record keys, shortest round-trip form."""
    return f"@{float(eps)!r}"


def _plabel(p) -> str:
    return "inf" if p == "inf" or (isinstance(p, float) and math.isinf(p)) else str(int(p))


def _pval(p) -> float:
    return math.inf if p == "inf" else float(p)


# ---------------------------------------------------------------------------
# pipelines


def _bounds(rec: Recorder, sc: dict, model: SamplingModel):
    K, nd = sc["window"]["K"], sc["window"]["doublings"]
    expected = sc["expect"]["stability"]
    for p in sc["p"]:
        pl, pv = _plabel(p), _pval(p)
        norm = f"p={pl}" + (", stacked euclidean" if pl == "2" else ", summed components")
        rep = stability_check(model, pv, K, nd)
        for Kt, eta, beta in rep.trace:
            rec.value(f"trace.eta[p={pl},K={Kt}]", eta, norm)
            rec.value(f"trace.beta[p={pl},K={Kt}]", beta, norm)
        rec.value(f"eta[p={pl}]", rep.eta_p, norm)
        rec.value(f"beta[p={pl}]", rep.beta_p, norm)
        first, last = rep.trace[0][1], rep.trace[-1][1]
        if rep.verdict == "inconclusive":
            verdict = "inconclusive"
        else:
            verdict = "pass" if rep.verdict == expected else "fail"
        rec.verdict(f"stability[p={pl}]", rep.verdict, verdict, first, last,
                    f"eta trace K={rep.trace[0][0]}..{rep.trace[-1][0]}, expected {expected}",
                    norm)
        U = model.operator(rep.trace[-1][0])
        delta = separation(U.sampling_set)
        chain = upper_bound_chain(model.phi, model.mu, delta, pv)
        rec.check(f"beta_le_chain[p={pl}]", rep.beta_p, chain, "<=", norm=norm)
        rec.value(f"block_sum_norm[p={pl}]", block_sum_norm(U, pv), f"p={pl}, sum of block norms")
        rec.value(f"direct_norm[p={pl}]", op_norm(U, pv), norm)
        if pl == "2":
            rb = riesz_bounds(model.phi, K, 2)
            rec.value("riesz.m[p=2]", rb.m_p, "p=2, gram eigenvalues")
            rec.value("riesz.M[p=2]", rb.M_p, "p=2, gram eigenvalues")
            rec.value("A[p=2]", rep.eta_p / rb.M_p, "eta/M")
            rec.value("B[p=2]", rep.beta_p / rb.m_p, "beta/m")
    if sc["export_operator"]:
        rec.value("operator.export", f"{sc['id']}.operator.csv")


@dataclass
class _Base:
    U: Any
    eta: float
    beta: float
    m: float
    M: float
    delta: float
    N: float
    phi_w1: float
    mu_tv: float

    @property
    def A(self):
        return self.eta / self.M

    @property
    def B(self):
        return self.beta / self.m


def _base(model: SamplingModel, K: int) -> _Base:
    U = model.operator(K)
    fs = FrameSystem.from_operator(U)
    rb = riesz_bounds(model.phi, K, 2)
    delta = separation(U.sampling_set)
    return _Base(U, fs.eta, fs.beta, rb.m_p, rb.M_p, delta, mesh_constant(delta, 2, model.phi.dim),
                 w_norm_vector(model.phi, 1), model.mu.total_variation())


def _perturbed_generator(phi: GeneratorVector, eps: float) -> GeneratorVector:
    comps = []
    for g in phi:
        sup = g.support()
        if sup is None:
            center, width = 0.0, 0.5
        else:
            center, width = 0.5 * (sup[0] + sup[1]), min(0.5, 0.25 * (sup[1] - sup[0]))
        comps.append(perturb_generator(g, eps / phi.r, center, width))
    return GeneratorVector(comps)


def _perturbed_measure(mu: VecMeasure, eps: float) -> VecMeasure:
    out = []
    for m in mu:
        sup = m.support()
        at = 0.0 if sup is None else 0.5 * (sup[0] + sup[1])
        out.append(blur_measure(eps / mu.t, at=at, base=m))
    return VecMeasure(out)


def _jitter_patterns(model, U, gamma, n, seed, tag):
    X = U.sampling_set
    for k in range(n):
        rng = np.random.default_rng([seed, tag, k])
        yield X.with_jitter(rng.uniform(-gamma, gamma, len(X)))


def _perturb_point(rec: Recorder, sc: dict, model, base: _Base, eps: float, idx: int):
    kind = sc["perturbation"]["kind"]
    K = base.U.K
    d = model.phi.dim
    at = _tag(eps)
    norm = "p=2, stacked euclidean"
    if kind == "jitter":
        bound = jitter_bound(model.phi, model.mu, eps, base.delta, 2)
        worst, worst_V = -1.0, None
        for X in _jitter_patterns(model, base.U, eps, sc["perturbation"]["patterns"],
                                  sc["seed"], idx):
            V = assemble(model.phi, model.mu, X, TruncationWindow(K), like=base.U)
            dist = operator_distance(base.U, V, 2)
            if dist > worst:
                worst, worst_V = dist, V
        rec.check(f"jitter.distance_le_bound{at}", worst, bound, "<=", norm=norm)
        tr = nutshell_transfer(base.eta, base.beta, worst)
        if tr.accepted:
            rec.value(f"jitter.transfer.eta{at}", tr.eta, norm)
            rec.value(f"jitter.transfer.beta{at}", tr.beta, norm)
            fs = FrameSystem.from_operator(worst_V)
            rec.check(f"jitter.eta_ge_transfer{at}", fs.eta, tr.eta, ">=", slack=1e-12, norm=norm)
            rec.check(f"jitter.beta_le_transfer{at}", fs.beta, tr.beta, "<=", slack=1e-12,
                      norm=norm)
        else:
            rec.verdict(f"jitter.transfer{at}", worst, "", worst, base.eta, "dist >= eta: rejected",
                        norm)
        return

    A, m = base.A, base.m
    if kind == "generator":
        budget = epsilon0_generator(A, m, base.N, d, base.mu_tv, base.phi_w1)
        theta, alpha = _perturbed_generator(model.phi, eps), model.mu
        dist_used = w_norm_vector(GeneratorVector([_diff(t, g) for t, g in zip(theta, model.phi)]),
                                  1)
    elif kind == "measure":
        budget = epsilon0_measure(A, m, base.N, d, base.phi_w1, B=base.B)
        theta, alpha = model.phi, _perturbed_measure(model.mu, eps)
        dist_used = sum(_tv_diff(a, b) for a, b in zip(alpha, model.mu))
    else:
        eps_g = eps_m = eps / 2
        budget = epsilon0_combined(A, m, base.N, d, base.mu_tv, base.phi_w1, epsilon1=eps_g)
        theta = _perturbed_generator(model.phi, eps_g)
        alpha = _perturbed_measure(model.mu, eps_m)
        dist_used = eps
    rec.value(f"{kind}.epsilon0{at}", budget.epsilon0, "W1 / total variation",
              detail=budget.as_dict())
    rec.value(f"{kind}.distance{at}", dist_used, "W1 / total variation")
    if kind == "combined":
        inside = eps / 2 <= budget.extras["epsilon2"] and eps < 2 * budget.extras["epsilon1"] + 1e-15
        inside = inside and budget.extras["A2"] > 0
    else:
        inside = eps < budget.epsilon0
    pmodel = SamplingModel(theta, alpha, model.step, model.offset, model.jitter, model.seed)
    if not inside:
        rec.verdict(f"{kind}.within_budget{at}", eps, "", eps, budget.epsilon0,
                    "outside budget: no claim")
        return
    a_pred, b_pred = budget.bounds(eps / 2 if kind == "combined" else eps)
    Up = pmodel.operator(K)
    fs = FrameSystem.from_operator(Up)
    rbp = riesz_bounds(theta, K, 2)
    rec.check(f"{kind}.A_measured_ge_predicted{at}", fs.eta / rbp.M_p, a_pred, ">=",
              norm="eta'/M' vs closed form")
    if math.isfinite(b_pred):
        rec.check(f"{kind}.B_measured_le_predicted{at}", fs.beta / rbp.m_p, b_pred, "<=",
                  norm="beta'/m' vs closed form")
    rep = stability_check(pmodel, 2, sc["window"]["K"], sc["window"]["doublings"])
    verdict = {"stable": "pass", "unstable": "fail"}.get(rep.verdict, "inconclusive")
    rec.verdict(f"{kind}.perturbed_stability{at}", rep.verdict, verdict, rep.trace[0][1],
                rep.trace[-1][1], "eta trace", norm)


def _diff(theta_i, phi_i):
    """The bump part of a perturbed component."""
    return theta_i.b.scaled(theta_i.c)


def _tv_diff(a, b):
    from .measure import combine, total_variation

    return total_variation(combine(a, b, 1.0, -1.0))


def _perturb(rec: Recorder, sc: dict, model: SamplingModel):
    base = _base(model, sc["window"]["K"])
    for name in ("eta", "beta", "m", "M", "A", "B", "N", "phi_w1", "mu_tv", "delta"):
        rec.value(f"base.{name}", getattr(base, name), "p=2")
    sweep = sc["perturbation"]["sweep"]
    if sc["perturbation"]["kind"] == "none" or not sweep:
        return
    for idx, eps in enumerate(sweep):
        try:
            _perturb_point(rec, sc, model, base, eps, idx)
        except (SISError, ValueError, np.linalg.LinAlgError) as exc:
            rec.error(f"{sc['perturbation']['kind']}{_tag(eps)}", exc)


def _perturbed_pieces(sc, model, base_U, eps, idx):
    kind = sc["perturbation"]["kind"]
    theta, alpha, X = model.phi, model.mu, base_U.sampling_set
    if kind in ("generator", "combined"):
        theta = _perturbed_generator(model.phi, eps / (2 if kind == "combined" else 1))
    if kind in ("measure", "combined"):
        alpha = _perturbed_measure(model.mu, eps / (2 if kind == "combined" else 1))
    if kind == "jitter":
        X = next(_jitter_patterns(model, base_U, eps, 1, sc["seed"], 1000 + idx))
    return theta, alpha, X


def _reconstruct(rec: Recorder, sc: dict, model: SamplingModel):
    tol = sc["tolerances"]
    U = model.operator(sc["window"]["K"])
    fs = FrameSystem.from_operator(U)
    norm = "p=2, stacked euclidean"
    rec.value("eta[p=2]", fs.eta, norm)
    rec.value("beta[p=2]", fs.beta, norm)
    rec.value("relaxation", fs.relaxation)
    agree = recover = 0.0
    ratio = 0.0
    for k in range(sc["reconstruct"]["trials"]):
        rng = np.random.default_rng([sc["seed"], 7, k])
        C = fs.embed(rng.standard_normal(fs.M.shape[1]))
        b = apply(U, C)
        r1 = reconstruct_richardson(fs, b)
        r2 = reconstruct_normal(fs, b)
        agree = max(agree, float(np.abs(r1.coefficients.flat() - r2.coefficients.flat()).max()))
        recover = max(recover, float(np.abs(r1.coefficients.flat() - C.flat()).max()))
        h = np.array(r1.history)
        if h.size > 1:
            ratio = max(ratio, float((h[1:] / h[:-1]).max()))
    rec.check("richardson_vs_normal", agree, tol["agreement"], "<=", slack=0.0, norm="max abs")
    rec.check("recovery_error", recover, tol["recovery"], "<=", slack=0.0, norm="max abs")
    rec.check("contraction", ratio, fs.contraction + tol["contraction"], "<=", slack=0.0,
              norm="residual ratio per step")
    if sc["perturbation"]["kind"] == "none":
        return
    for idx, eps in enumerate(sc["perturbation"]["sweep"]):
        try:
            _end_to_end_point(rec, sc, model, U, fs, eps, idx)
        except (SISError, ValueError, np.linalg.LinAlgError) as exc:
            rec.error(f"end_to_end{_tag(eps)}", exc)


def _end_to_end_point(rec, sc, model, U, fs, eps, idx):
    at = _tag(eps)
    theta, alpha, X = _perturbed_pieces(sc, model, U, eps, idx)
    rng = np.random.default_rng([sc["seed"], 11, idx])
    C = fs.embed(rng.standard_normal(fs.M.shape[1]))
    res = end_to_end_error(U, model.phi, C, theta, alpha, X)
    rec.check(f"end_to_end.error_le_chain{at}", res.error,
              res.bound_chain + sc["tolerances"]["quadrature"], "<=", slack=0.0, norm="L2")
    V = assemble(theta, alpha, X, TruncationWindow(U.K), like=U)
    md = measured_distances(U, V)
    eb = ErrorBudget.build(md.epsilon, fs.eta, fs.beta)
    rec.value(f"nu{at}", eb.nu)
    if eb.admissible:
        rec.check(f"gram_distance{at}", md.gram, eb.gram_bound, "<=", slack=1e-12,
                  norm="p=2 spectral")
        rec.check(f"inverse_distance{at}", md.inverse, eb.inverse_bound, "<=", slack=1e-12,
                  norm="p=2 spectral")
        rec.check(f"pseudoinverse_distance{at}", md.pseudoinverse, eb.pseudoinverse_bound, "<=",
                  slack=1e-12, norm="p=2 spectral")
    else:
        rec.verdict(f"pseudoinverse_distance{at}", md.pseudoinverse, "", md.epsilon,
                    eb.epsilon, "epsilon inadmissible: no claim")


def _localize(rec: Recorder, sc: dict, model: SamplingModel):
    s = sc["localize"]["s"]
    K = sc["window"]["K"]
    phi, mu = model.phi, model.mu
    ws = check_Ws(phi, s, K)
    for i, f in enumerate(ws.generator_fits):
        rec.verdict(f"generator_decay[{i}]", f.c_hat, "pass" if f.passed else "fail",
                    f.max_ratio_tail, f.max_ratio_head, "tail max ratio <= 1.05 head max ratio",
                    f"s={format_value(s)}")
    rec.value("riesz.m[p=2]", ws.riesz.m_p)
    rec.value("riesz.M[p=2]", ws.riesz.M_p)
    for l, m in enumerate(mu):
        rec.value(f"moment[{l}]", moment(m, s), f"s={format_value(s)}")
    U = model.operator(K)
    for name, fit in (("cross_gram_decay", cross_gram_decay(U, s)),
                      ("dual_cross_gram_decay", dual_cross_gram_decay(phi, U, s))):
        rec.verdict(name, fit.c_hat, "pass" if fit.passed else "fail", fit.max_ratio_tail,
                    fit.max_ratio_head, "tail max ratio <= 1.05 head max ratio",
                    f"s={format_value(s)}")
    if phi.r == 1:
        dual = dual_generator(phi, K)
        rec.value("dual.center", dual.center().real)
        rec.value("dual.rate", dual_decay_rate(dual))
        inv = inverse_decay(gram_matrix(phi, K), s)
        rec.value("gram_inverse.rate", inv.rate)
        rec.verdict("gram_inverse_decay", inv.fit.c_hat, "pass" if inv.fit.passed else "fail",
                    inv.fit.max_ratio_tail, inv.fit.max_ratio_head,
                    "tail max ratio <= 1.05 head max ratio", f"s={format_value(s)}")
    mp = multi_p_stability(model, K0=K, doublings=sc["window"]["doublings"], s=s)
    for p, r in mp.reports.items():
        rec.value(f"multi_p.eta[p={_plabel(p)}]", r.eta_p)
        rec.value(f"multi_p.verdict[p={_plabel(p)}]", r.verdict)
    rec.verdict("multi_p.alert", mp.alert, "fail" if mp.alert else "pass",
                detail={"localized": mp.localized})


def _sweep(rec: Recorder, sc: dict, model: SamplingModel):
    _perturb(rec, sc, model)
    U = model.operator(sc["window"]["K"])
    fs = FrameSystem.from_operator(U)
    for idx, eps in enumerate(sc["perturbation"]["sweep"]):
        try:
            _end_to_end_point(rec, sc, model, U, fs, eps, idx)
        except (SISError, ValueError, np.linalg.LinAlgError) as exc:
            rec.error(f"end_to_end{_tag(eps)}", exc)


_RUNNERS = {"bounds": _bounds, "perturb": _perturb, "reconstruct": _reconstruct,
            "localize": _localize, "sweep": _sweep}


def run(sc: dict, pipeline: Optional[str] = None, out: Optional[Path] = None) -> list:
    """Run one resolved scenario; numerical failures become failure records."""
    pipeline = pipeline or sc["pipeline"]
    rec = Recorder(sc["id"], pipeline, sc["tolerances"]["relative"])
    rec.value("scenario.resolved", None, detail=sc)
    try:
        model = build_model(sc, sc["seed"])
        _RUNNERS[pipeline](rec, sc, model)
        if sc["export_operator"] and out is not None:
            export_triplets(model.operator(sc["window"]["K"]), out / f"{sc['id']}.operator.csv")
    except (SISError, ValueError, NotImplementedError, np.linalg.LinAlgError) as exc:
        log.warning("scenario %s: %s", sc["id"], exc)
        rec.error("error", exc)
    return rec.records


def emit(records: list, out: Path) -> None:
    """Write report.jsonl and report.csv into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.jsonl", "w", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.as_json(), sort_keys=True, separators=(",", ":")) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.scenario_id, r.pipeline, r.key, format_value(r.value), r.verdict])


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def exit_code(records: list) -> int:
    verdicts = {r.verdict for r in records}
    if "fail" in verdicts:
        return EXIT_FAIL
    if "inconclusive" in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _configure_logging():
    level = os.environ.get("SIS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sis", description="Average sampling experiments.")
    ap.add_argument("--version", action="version", version=f"sis {__version__}")
    sub = ap.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--window-doublings", type=int, default=None,
                       help="override window.doublings")
    return ap


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        scenarios = parse_scenario(args.scenario)
    except SchemaError as exc:
        print(f"schema error at {exc.path or '<root>'}: {exc.message}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SCHEMA
    out = Path(args.out)
    records = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sc in scenarios:
            if args.seed is not None:
                if args.seed < 0:
                    raise SchemaError("seed", "must be nonnegative")
                sc["seed"] = args.seed
            if args.window_doublings is not None:
                if args.window_doublings < 0:
                    raise SchemaError("window.doublings", "must be nonnegative")
                sc["window"]["doublings"] = args.window_doublings
            records.extend(run(sc, args.pipeline, out))
        emit(records, out)
    except SchemaError as exc:
        print(f"schema error at {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return exit_code(records)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
