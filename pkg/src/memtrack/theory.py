"""Numerical verifiers for the two closed-form behavior bounds.

1. Position-bias tail mass: with slope beta < 0, attention mass on
   memories farther than the trained horizon K is a geometric tail
   bounded by e^{beta (K+1)} / (1 - e^beta); the horizon needed to hold
   tail mass below eta is ln(1/eta)/|beta| - 1.
2. State decay: one impulse into the recurrent state is attenuated by the
   elementwise product of decay factors, bounded by exp(-c k) with c the
   weakest realized decay rate.

Verifiers run against the deployed per-head slopes and the real scan
implementation, so they check the code as configured rather than the
formulas in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .dynamic_state import DsfModule, decay_envelope_check
from .memory_prompt import alibi_slopes
from .params import ParamStore, Scope
from .rng import make_rng


class DomainError(ValueError):
    pass


@dataclass
class TailMassReport:
    beta: float
    k_train: int
    l_test: int
    exact_tail: float
    bound: float
    strictly_below: bool

    def horizon(self, eta: float) -> float:
        return np.log(1.0 / eta) / abs(self.beta) - 1.0


def tail_mass(beta: float, k_train: int, l_test: int) -> TailMassReport:
    """Closed-form geometric partial sum of e^{beta k}, k = K+1..L, plus bound.

    The partial sum sits strictly below the infinite-sum bound; at strong
    decay the gap bound * e^{beta (L-K)} falls under one float64 ulp, so
    `strictly_below` records the mathematical strict inequality: either the
    floats separate, or they tie while the remainder is positive but
    unrepresentable.
    """
    if beta >= 0:
        raise DomainError("tail mass requires beta < 0")
    if not l_test > k_train >= 0:
        raise DomainError("requires L > K >= 0")
    q = np.exp(beta)
    remainder = np.exp(beta * (l_test - k_train))
    exact = np.exp(beta * (k_train + 1)) * (1.0 - remainder) / (1.0 - q)
    bound = np.exp(beta * (k_train + 1)) / (1.0 - q)
    strictly_below = exact < bound or (exact == bound and 0.0 < remainder
                                       and remainder < np.finfo(float).eps)
    return TailMassReport(beta, k_train, l_test, float(exact), float(bound),
                          bool(strictly_below))


def tail_mass_naive(beta: float, k_train: int, l_test: int) -> float:
    """Direct summation oracle for the closed form."""
    ks = np.arange(k_train + 1, l_test + 1, dtype=np.float64)
    return float(np.exp(beta * ks).sum())


def min_horizon_with_bound(beta: float, eta: float, k_max: int = 100000) -> int:
    """Smallest integer K with e^{beta (K+1)} <= eta (scan oracle).

    This is the exponent-crossing horizon the closed formula
    ln(1/eta)/|beta| - 1 solves exactly; the full geometric bound carries
    an extra 1/(1 - e^beta) factor that the order-of-magnitude horizon
    statement drops.
    """
    for k in range(k_max):
        if np.exp(beta * (k + 1)) <= eta:
            return k
    raise DomainError("no horizon found below k_max")


def attention_ratio_law(beta: float, gap: int, n_memories: int = 32) -> float:
    """Measured softmax ratio between two equal-content memories `gap` apart.

    Builds an explicit softmax over distance-biased logits (content logits
    zero) and returns p(distance=gap) / p(distance=0); the law says this
    equals exp(beta * gap) regardless of bank size.
    """
    n = max(n_memories, gap + 1)
    distances = np.arange(n, dtype=np.float64)
    logits = beta * distances
    shifted = np.exp(logits - logits.max())
    p = shifted / shifted.sum()
    return float(p[gap] / p[0])


def ssm_influence_decay(cfg: Config | None = None, k_list=(1, 2, 4, 8, 16), seed: int = 0):
    """Impulse response of the real scan vs the exp(-c k) envelope.

    Runs a parameter draw of the dynamic-state scan on a single token:
    a unit impulse at step 0 followed by zero inputs, measuring the state
    magnitude ratio |h_k| / |h_0| per coordinate. Returns rows of
    (k, measured, bound, measured/bound).
    """
    if cfg is None:
        cfg = Config(backbone_dim=8, dsf_inner_mult=2, dsf_state_dim=4)
    store = ParamStore()
    scope = Scope(store, "probe", True, make_rng(seed, "ssm-influence"))
    module = DsfModule(scope, cfg)

    impulse = np.ones((1, module.ds))
    zero = np.zeros((1, module.ds))
    h = np.zeros((1, module.ds, module.e))
    _, h, cache0 = module.ssm_scan(impulse, h)
    h0 = h.copy()
    mask = np.abs(h0) > 1e-12

    rows = []
    deltas: list[np.ndarray] = []
    k_max = max(k_list)
    measured_at = {}
    for step in range(1, k_max + 1):
        _, h, cache = module.ssm_scan(zero, h)
        deltas.append(cache["dt"][0])
        if step in k_list:
            ratio = np.abs(h[mask]) / np.abs(h0[mask])
            measured_at[step] = float(ratio.max())
    a = cache0["a"]
    for k in sorted(set(k_list)):
        _, bound = decay_envelope_check(deltas, a, span=k)
        measured = measured_at[k]
        rows.append((k, measured, bound, measured / bound))
    return rows


def theory_report(betas=None, heads: int = 4, k_train: int = 50, l_test: int = 200,
                  etas=(0.1, 0.01, 0.001), n_decay_draws: int = 20):
    """All bound checks in one record, suitable for text/CSV emission."""
    if betas is None:
        betas = [-float(m) for m in alibi_slopes(heads)]
    report = {"tail": [], "horizon": [], "ratio": [], "decay": []}
    for beta in betas:
        tm = tail_mass(beta, k_train, l_test)
        report["tail"].append(
            {"beta": beta, "k": k_train, "l": l_test, "exact_tail": tm.exact_tail,
             "bound": tm.bound, "ok": tm.strictly_below}
        )
        for eta in etas:
            formula = int(np.ceil(tm.horizon(eta)))
            scanned = min_horizon_with_bound(beta, eta)
            report["horizon"].append(
                {"beta": beta, "eta": eta, "formula": formula, "scanned": scanned,
                 "ok": abs(formula - scanned) <= 1}
            )
        for gap in (1, 2, 4, 8, 16):
            measured = attention_ratio_law(beta, gap)
            expected = float(np.exp(beta * gap))
            report["ratio"].append(
                {"beta": beta, "gap": gap, "measured": measured, "expected": expected,
                 "ok": abs(measured - expected) <= 1e-12}
            )
    for draw in range(n_decay_draws):
        for k, measured, bound, ratio in ssm_influence_decay(seed=draw):
            report["decay"].append(
                {"draw": draw, "k": k, "measured": measured, "bound": bound,
                 "ratio": ratio, "ok": ratio <= 1.0 + 1e-12}
            )
    report["all_ok"] = all(
        row["ok"] for section in ("tail", "horizon", "ratio", "decay")
        for row in report[section]
    )
    return report
