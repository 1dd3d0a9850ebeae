"""Trajectory-level verification of the competition's long-run claims.

Each check turns an asymptotic statement into a finite-horizon proxy with an
explicit threshold, measures the relevant quantities on one simulated
trajectory, and records pass/fail together with what was measured.  A report
aggregates the applicable claims; its overall verdict is their conjunction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .certificate import Certificate, build_certificate
from .dynamics import ChemostatParams, State, predicted_limit
from .errors import CertificateError, ChemostatError, WashoutError
from .growth import GrowthFunction, OrderedSpecies, order_species
from .integrate import (
    Trajectory,
    _B_ZERO,
    first_persistent_entry,
    scan_persistent_entry,
    simulate,
)

if TYPE_CHECKING:  # pragma: no cover
    from .cli import Scenario

_RATIO_FLOOR = 1e-300  # discard ratio samples below this before taking logs
_MIN_FIT_SAMPLES = 8


@dataclass(frozen=True)
class ClaimResult:
    """Outcome of one claim: measured quantities against their thresholds."""

    claim_id: str
    applicable: bool
    passed: bool
    measured: dict
    thresholds: dict
    detail: str = ""


def _not_applicable(claim_id: str, detail: str) -> ClaimResult:
    return ClaimResult(claim_id, False, True, {}, {}, detail)


@dataclass(frozen=True)
class VerificationReport:
    """All claim results for one scenario plus the certificate summary."""

    scenario_digest: str
    certificate: dict | None
    claims: tuple[ClaimResult, ...]
    overall_pass: bool

    def to_dict(self) -> dict:
        return {
            "scenario_digest": self.scenario_digest,
            "certificate": self.certificate,
            "claims": [
                {
                    "id": c.claim_id,
                    "applicable": c.applicable,
                    "pass": c.passed,
                    "measured": _json_safe(c.measured),
                    "thresholds": _json_safe(c.thresholds),
                    "detail": c.detail,
                }
                for c in self.claims
            ],
            "overall_pass": self.overall_pass,
        }

    def to_text(self) -> str:
        width = max((len(c.claim_id) for c in self.claims), default=10)
        lines = [f"{'claim'.ljust(width)}  status  detail"]
        for c in self.claims:
            status = "n/a " if not c.applicable else ("PASS" if c.passed else "FAIL")
            shown = c.detail
            if not shown and c.measured:
                shown = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(c.measured.items()))
            lines.append(f"{c.claim_id.ljust(width)}  {status}    {shown}")
        lines.append(f"overall: {'PASS' if self.overall_pass else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _json_safe(d: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float):
            if math.isinf(v):
                v = "inf" if v > 0 else "-inf"
            elif math.isnan(v):
                v = "nan"
        out[k] = v
    return out


def fit_log_decay(
    t: np.ndarray, v: np.ndarray, floor: float = _RATIO_FLOOR
) -> tuple[float | None, int]:
    """Least-squares slope of log v over t, skipping sub-floor samples.

    Returns (slope, samples used); slope is None when too few samples remain
    to support a line.
    """
    mask = np.isfinite(v) & (v > floor)
    n = int(np.count_nonzero(mask))
    if n < _MIN_FIT_SAMPLES:
        return None, n
    slope = float(np.polyfit(t[mask], np.log(v[mask]), 1)[0])
    return slope, n


def check_mass_convergence(
    traj: Trajectory, params: ChemostatParams, eps: float
) -> ClaimResult:
    """Total mass reaches and keeps an eps-band around s_in.

    The entry time is predicted from the exact exponential relaxation of the
    mass balance and compared against the trajectory's persistent entry into
    the band; every sample past the predicted time must sit inside the band.
    """
    t = traj.times
    m = traj.channels.m
    dev0 = abs(float(m[0]) - params.s_in)
    t_pred = math.log(dev0 / eps) / params.d if dev0 > eps else 0.0

    after = t >= t_pred - 1e-12
    if not np.any(after):
        return ClaimResult(
            "mass_convergence",
            True,
            False,
            {"predicted_entry": t_pred, "horizon": traj.horizon},
            {"eps": eps},
            "predicted entry time lies beyond the horizon",
        )
    resid = float(np.max(np.abs(m[after] - params.s_in)))

    inside = np.abs(m - params.s_in) <= eps
    entry_idx, _, _ = scan_persistent_entry(t, inside)
    empirical = float(t[entry_idx]) if entry_idx is not None else None
    time_tol = max(0.05 * t_pred, 2.0 * traj.meta.dense_dt)
    ok_time = empirical is not None and abs(empirical - t_pred) <= time_tol
    passed = resid <= eps and ok_time
    return ClaimResult(
        "mass_convergence",
        True,
        passed,
        {
            "initial_mass": float(m[0]),
            "predicted_entry": t_pred,
            "empirical_entry": empirical,
            "max_residual_after_entry": resid,
        },
        {"eps": eps, "entry_time_tol": time_tol},
    )


def check_washout_species(
    traj: Trajectory, ordered: OrderedSpecies, s_in: float, eps: float
) -> ClaimResult:
    """Species whose break-even level is at or above s_in die out.

    Each such density must end below eps and be non-increasing (within
    integrator noise) over the final tenth of the samples.
    """
    targets = [
        (rec.id, ordered.permutation[pos])
        for pos, rec in enumerate(ordered.records)
        if rec.lam >= s_in
    ]
    if not targets:
        return _not_applicable("washout_extinction", "no species with break-even level >= s_in")

    tail_start = int(0.9 * (traj.times.size - 1))
    abs_tol = traj.meta.abs_tol
    worst_final = 0.0
    worst_increase = 0.0
    monotone_ok = True
    for _, orig in targets:
        xj = traj.states[:, 1 + orig]
        worst_final = max(worst_final, float(xj[-1]))
        tail = xj[tail_start:]
        increase = np.diff(tail) - (1e-6 * tail[:-1] + abs_tol)
        if increase.size and float(np.max(increase)) > 0.0:
            monotone_ok = False
            worst_increase = max(worst_increase, float(np.max(np.diff(tail))))
    passed = worst_final < eps and monotone_ok
    return ClaimResult(
        "washout_extinction",
        True,
        passed,
        {
            "species": len(targets),
            "worst_final_density": worst_final,
            "worst_tail_increase": worst_increase,
        },
        {"eps": eps},
    )


def check_biomass_floor(
    traj: Trajectory,
    ordered: OrderedSpecies,
    params: ChemostatParams,
    eps_floor: float,
) -> ClaimResult:
    """Total biomass stays above a positive floor after a burn-in.

    Applicable only when some initially present species has a break-even
    level below s_in; the burn-in is the first tenth of the horizon.
    """
    x0 = traj.states[0, 1:]
    viable = any(
        x0[ordered.permutation[pos]] > 0.0 and rec.lam < params.s_in
        for pos, rec in enumerate(ordered.records)
    )
    if not viable:
        return _not_applicable(
            "biomass_floor", "no initially present species can grow at s_in"
        )
    t_burn = 0.1 * traj.horizon
    after = traj.times >= t_burn
    floor = float(np.min(traj.channels.b[after]))
    return ClaimResult(
        "biomass_floor",
        True,
        floor >= eps_floor,
        {"floor": floor, "burn_in": t_burn},
        {"eps_floor": eps_floor},
    )


def check_substrate_frame(
    traj: Trajectory,
    cert: Certificate,
    growths: Sequence[GrowthFunction],
    params: ChemostatParams,
    search_from: float = 0.0,
) -> ClaimResult:
    """Substrate derivative is framed by the widened dilution bounds.

    First locates the time (no earlier than ``search_from``) from which
    d*(s_in - s)/b stays inside [d_minus, d_plus]; past that time every
    sampled derivative must lie between the frame rails, up to a slack
    covering integration accuracy.
    """
    if cert.degenerate:
        return _not_applicable("substrate_frame", "degenerate certificate")
    keep = traj.times >= search_from
    t = traj.times[keep]
    s = traj.states[keep, 0]
    b = traj.channels.b[keep]
    p_kept = traj.channels.p[keep]
    x_kept = traj.states[keep, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        dz = np.where(b >= _B_ZERO, params.d * (params.s_in - s) / b, np.nan)
    inside = np.isfinite(dz) & (dz >= cert.d_minus) & (dz <= cert.d_plus)
    entry_idx, _, _ = scan_persistent_entry(t, inside)
    if entry_idx is None:
        half = t.size // 2
        tail = dz[half:][np.isfinite(dz[half:])]
        rng = (float(np.min(tail)), float(np.max(tail))) if tail.size else (math.nan, math.nan)
        return ClaimResult(
            "substrate_frame",
            True,
            False,
            {"dz_late_min": rng[0], "dz_late_max": rng[1]},
            {"d_minus": cert.d_minus, "d_plus": cert.d_plus},
            "frame never established before the horizon",
        )

    T = float(t[entry_idx])
    sl = slice(entry_idx, None)
    x = x_kept[sl]
    s_a = s[sl]
    b_a = b[sl]
    mu = np.column_stack([g(s_a) for g in growths])
    mubar = np.einsum("ij,ij->i", p_kept[sl], mu)
    sdot = params.d * (params.s_in - s_a) - np.einsum("ij,ij->i", mu, x)
    phi_lo = (cert.d_minus - mubar) * b_a
    phi_hi = (cert.d_plus - mubar) * b_a
    slack = 100.0 * traj.meta.rel_tol * (1.0 + params.s_in) * (1.0 + params.d)
    low_gap = phi_lo - sdot - slack
    high_gap = sdot - phi_hi - slack
    violations = int(np.count_nonzero(low_gap > 0.0) + np.count_nonzero(high_gap > 0.0))
    worst = max(float(np.max(low_gap)), float(np.max(high_gap)), 0.0)
    return ClaimResult(
        "substrate_frame",
        True,
        violations == 0,
        {"frame_time": T, "violations": violations, "worst_violation": worst},
        {"d_minus": cert.d_minus, "d_plus": cert.d_plus, "slack": slack},
    )


def check_induction_properties(
    traj: Trajectory,
    cert: Certificate,
    id_to_column: Mapping[str, int],
    eps_p: float,
    grace: float = 0.0,
    slope_slack: float | None = None,
) -> list[ClaimResult]:
    """Per-stage absorbing-interval entries and ratio decay.

    Stage i requires the substrate to enter the i-th absorbing interval for
    good, no earlier than the next (wider) stage's entry, and every pack
    above i to decay: the log of its summed density ratio against the lead
    species must fall at least at rate nu (minus the slack), and its final
    proportion must end below eps_p.
    """
    if cert.degenerate:
        return [_not_applicable("exclusion_stage_1", "degenerate certificate")]
    nu = cert.nu
    if slope_slack is None:
        slope_slack = 0.1 * nu
    slope_threshold = -nu + slope_slack

    entries = [first_persistent_entry(traj, iv, grace) for iv in cert.intervals]
    ref_col = id_to_column[cert.packs[0].ids[0]]
    x_ref = traj.states[:, ref_col]
    t = traj.times
    order_slack = 2e-9 * traj.horizon

    results = []
    for i, rec in enumerate(entries):
        measured: dict = {
            "entry_time": rec.entry_time,
            "excursions": rec.excursions,
        }
        details = []
        ok = rec.entry_time is not None
        if not ok:
            details.append("no persistent entry into the absorbing interval")
        if i + 1 < len(entries) and rec.entry_time is not None:
            nxt = entries[i + 1].entry_time
            if nxt is not None and rec.entry_time < nxt - order_slack:
                ok = False
                details.append("entered the smaller interval earlier than the larger one")

        if rec.entry_time is not None:
            window = t >= rec.entry_time
            for j in range(i + 1, len(cert.packs)):
                cols = [id_to_column[sid] for sid in cert.packs[j].ids]
                with np.errstate(divide="ignore", invalid="ignore"):
                    r_pack = np.where(
                        x_ref > 0.0,
                        traj.states[:, cols].sum(axis=1) / x_ref,
                        np.nan,
                    )
                slope, n_used = fit_log_decay(t[window], r_pack[window])
                p_final = float(
                    np.sum(traj.channels.p[-1, [c - 1 for c in cols]])
                )
                measured[f"slope_pack_{j + 1}"] = slope
                measured[f"p_final_pack_{j + 1}"] = p_final
                prop_ok = math.isfinite(p_final) and p_final < eps_p
                if slope is None:
                    decay_ok = prop_ok
                    if prop_ok:
                        details.append(f"pack {j + 1} ratio below the log floor; extinct")
                    else:
                        details.append(f"pack {j + 1} ratio unfittable")
                else:
                    decay_ok = slope <= slope_threshold
                    if not decay_ok:
                        details.append(
                            f"pack {j + 1} decay rate {slope:.4g} above {slope_threshold:.4g}"
                        )
                if not prop_ok:
                    details.append(f"pack {j + 1} final proportion {p_final:.4g} >= {eps_p:g}")
                ok = ok and decay_ok and prop_ok

        results.append(
            ClaimResult(
                f"exclusion_stage_{i + 1}",
                True,
                ok,
                measured,
                {"nu": nu, "slope_threshold": slope_threshold, "eps_p": eps_p},
                "; ".join(details),
            )
        )
    return results


def check_final_convergence(traj: Trajectory, predicted: State, eps: float) -> ClaimResult:
    """Final state matches the predicted limit within eps.

    The winner pack is compared by its summed density (only the pack total
    is predicted); every other density must end at or below eps.
    """
    s_final = float(traj.states[-1, 0])
    x_final = traj.states[-1, 1:]
    winner = predicted.x > 0.0
    s_err = abs(s_final - predicted.s)
    pack_err = abs(float(np.sum(x_final[winner])) - float(np.sum(predicted.x[winner])))
    others = x_final[~winner]
    others_max = float(np.max(others)) if others.size else 0.0
    passed = s_err <= eps and pack_err <= eps and others_max <= eps
    return ClaimResult(
        "final_state",
        True,
        passed,
        {
            "substrate_error": s_err,
            "winner_pack_error": pack_err,
            "max_loser_density": others_max,
        },
        {"eps": eps},
    )


def run_report(scenario: "Scenario") -> VerificationReport:
    """Simulate a scenario once and evaluate every applicable claim.

    Simulation and certificate failures become failed report entries rather
    than exceptions, so a report is always produced for a parseable scenario.
    """
    params = scenario.params
    opts = scenario.options
    tols = scenario.tolerances
    growths = [g for _, g in scenario.species]
    probe = opts.probe_factor * params.s_in

    ordered_full = order_species(
        scenario.species,
        params.d,
        eq_tol=opts.eq_tol,
        root_tol=opts.root_tol,
        s_probe_max=probe,
    )
    lam_by_id = {rec.id: rec.lam for rec in ordered_full.records}
    id_to_column = {sid: 1 + k for k, (sid, _) in enumerate(scenario.species)}

    claims: list[ClaimResult] = []
    cert_summary: dict | None = None
    try:
        traj = simulate(
            params,
            growths,
            scenario.initial,
            scenario.horizon,
            rel_tol=tols.rel_tol,
            abs_tol=tols.abs_tol,
            dense_dt=opts.dense_dt,
        )
    except ChemostatError as exc:
        claims.append(
            ClaimResult("simulation", True, False, {}, {}, f"integration failed: {exc}")
        )
        return VerificationReport(scenario.digest(), None, tuple(claims), False)

    claims.append(check_mass_convergence(traj, params, opts.eps_mass))
    claims.append(check_washout_species(traj, ordered_full, params.s_in, opts.eps_washout))
    claims.append(check_biomass_floor(traj, ordered_full, params, opts.eps_floor))

    active = [
        (sid, g)
        for (sid, g), xi in zip(scenario.species, scenario.initial.x)
        if xi > 0.0
    ]
    viable = any(lam_by_id[sid] < params.s_in for sid, _ in active)

    cert: Certificate | None = None
    if viable:
        ordered_active = order_species(
            active,
            params.d,
            eq_tol=opts.eq_tol,
            root_tol=opts.root_tol,
            s_probe_max=probe,
        )
        try:
            cert = build_certificate(
                ordered_active, params.d, params.s_in, grid_n=opts.grid_n
            )
            cert_summary = cert.to_dict()
        except WashoutError as exc:  # unreachable when viable, kept for safety
            cert_summary = {"status": "washout", "detail": str(exc)}
        except CertificateError as exc:
            cert_summary = {"status": "error", "detail": str(exc)}
            claims.append(
                ClaimResult(
                    "certificate_construction", True, False, {}, {}, str(exc)
                )
            )
        pred_reduced = predicted_limit(params, ordered_active)
        x_full = np.zeros(len(scenario.species))
        for red_idx, (sid, _) in enumerate(active):
            x_full[id_to_column[sid] - 1] = pred_reduced.x[red_idx]
        predicted = State(s=pred_reduced.s, x=x_full)
    else:
        cert_summary = {
            "status": "washout",
            "detail": "no initially present species has a break-even level below s_in",
        }
        predicted = State(s=params.s_in, x=np.zeros(len(scenario.species)))

    if cert is not None and not cert.degenerate:
        claims.append(check_substrate_frame(traj, cert, growths, params))
        claims.extend(
            check_induction_properties(
                traj, cert, id_to_column, tols.eps_p, grace=opts.persistence_grace
            )
        )
    else:
        why = (
            "degenerate certificate"
            if cert is not None
            else (cert_summary or {}).get("detail", "no certificate")
        )
        claims.append(_not_applicable("substrate_frame", why))
        claims.append(_not_applicable("exclusion_stage_1", why))

    claims.append(check_final_convergence(traj, predicted, tols.eps_final))

    overall = all(c.passed for c in claims if c.applicable)
    return VerificationReport(scenario.digest(), cert_summary, tuple(claims), overall)
