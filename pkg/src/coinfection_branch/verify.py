"""Invariant suite run by ``coinfection-branch verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branch import AssumptionBreak, HopfOnset, StepPolicy, classify_scenario, trace
from .equilibria import EqType, thresholds
from .errors import CoinfectionError
from .model import derive, identity_residuals, inequality_checks, validate_standing_assumptions
from .stability import interaction_det_check, lambda1_coefficient


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "ok": self.ok, "detail": self.detail}


def default_K_range(params):
    """From below sigma1 to 20% past the last finite threshold."""
    t = thresholds(params, strict=False)
    marks = [k for k in (t.sigma1, t.KG3toG6, t.Khat1, t.Khat2, t.KG7toG5) if k]
    return 0.2 * t.sigma1, 1.2 * max(marks)


def run_checks(params, K_range=None, n_steps=2000):
    checks = []
    d = derive(params)
    res = identity_residuals(params, d)
    worst = max(res.values())
    checks.append(Check("identities", worst <= 1e-10, f"max relative residual {worst:.3e}"))
    standing = validate_standing_assumptions(d)
    bad = [n for n, ok in standing if not ok]
    checks.append(Check("standing-assumptions", not bad, ", ".join(bad)))
    if not bad:
        ineq = inequality_checks(params, d)
        failed = [k for k, v in ineq.items() if not v]
        checks.append(Check("inequalities", not failed, ", ".join(failed)))
    try:
        scenario = classify_scenario(params)
        checks.append(Check("scenario", True, scenario.tag))
    except CoinfectionError as exc:
        checks.append(Check("scenario", False, str(exc)))
        scenario = None

    K_lo, K_hi = K_range or default_K_range(params)
    try:
        branch = trace(params, K_lo, K_hi, StepPolicy(n_steps=n_steps))
    except CoinfectionError as exc:
        checks.append(Check("trace", False, str(exc)))
        return checks

    if scenario is not None:
        expected = [t for t in scenario.chain]
        got = branch.chain()
        ok = got == expected[: len(got)] and all(
            tr.predicted is not None and abs(tr.K - tr.predicted) <= 1e-6 * tr.predicted
            for tr in branch.transitions())
        detail = " -> ".join(t.value for t in got)
        checks.append(Check("transitions", ok, detail))

    hopf = [e.K for e in branch.events if isinstance(e, HopfOnset)]
    marks = [k for k, _, _ in scenario.predictedTransitions] if scenario else []
    stray = [
        e for e in branch.events
        if isinstance(e, AssumptionBreak)
        and not any(abs(e.K - m) <= 1e-6 * e.K for m in marks)
        and not (e.which == "no-stable" and hopf and e.K > hopf[0])
    ]
    checks.append(Check("unique-stable", not stray,
                        "; ".join(f"{e.which}@{e.K!r}" for e in stray)))

    disagree = [s.K for s in branch.samples if s.report.agrees is False]
    checks.append(Check("closed-form-agreement", not disagree, f"{len(disagree)} disagreements"))

    det_worst, routes_ok = 0.0, True
    for s in branch.samples:
        if s.equilibrium.type_tag is not EqType.G8:
            continue
        lhs, rhs = interaction_det_check(s.equilibrium, params)
        det_worst = max(det_worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
        try:
            lambda1_coefficient(s.equilibrium, params)
        except CoinfectionError:
            routes_ok = False
    checks.append(Check("detB-identity", det_worst <= 1e-8, f"max relative gap {det_worst:.3e}"))
    checks.append(Check("lambda1-routes", routes_ok))

    mono_ok = True
    for a, b in branch.runs(EqType.G8):
        pts = branch.points[a:b]
        if len(pts) > 1:
            mono_ok &= bool(np.all(np.diff(pts[:, 0]) < 0) and np.all(np.diff(pts[:, 3]) < 0))
    checks.append(Check("coexistence-monotone", mono_ok))
    return checks
