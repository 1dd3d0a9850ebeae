"""Separation margins, domination gaps, and dilution bounds.

For species ordered by break-even level, consecutive packs are separated by
widened substrate intervals on which the faster pack strictly dominates every
slower one.  This module constructs explicit constants witnessing that
picture: per-boundary margins (s_i_minus, s_i_plus), a uniform domination gap
nu, the rate gaps gamma_minus / gamma_plus at the outermost margins, the
widened dilution bounds (d_minus, d_plus), and the nested absorbing intervals
[s_1_minus, s_i_plus].

All strict inequalities are checked on dense grids; the constructed gap is
halved so any certified nu is a conservative witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CertificateError, ParameterError, WashoutError
from .growth import OrderedSpecies

_DELTA_MIN_REL = 1e-9  # extension floor relative to the smallest break-even level


@dataclass(frozen=True)
class PackSummary:
    """One pack of species sharing a break-even level (inf for unreachable)."""

    ids: tuple[str, ...]
    lam: float


@dataclass(frozen=True)
class Boundary:
    """Margins around the gap between pack i and pack i+1.

    ``lam_upper_eff`` is the upper break-even level actually used; it is the
    overshoot cap instead of the true level when the latter is infinite or
    beyond the cap (``capped`` marks that substitution).
    """

    s_minus: float
    s_plus: float
    lam_lower: float
    lam_upper_eff: float
    capped: bool
    delta: float
    gap_min: float


@dataclass(frozen=True)
class Certificate:
    """Constructive constants certifying the competition's outcome.

    A degenerate certificate (fewer than two packs with finite break-even
    level) carries the pack summary and notes but no margins; its ``nu`` and
    rate bounds are None.
    """

    d: float
    s_in: float
    packs: tuple[PackSummary, ...]
    boundaries: tuple[Boundary, ...]
    nu: float | None
    gamma_minus: float | None
    gamma_plus: float | None
    d_minus: float | None
    d_plus: float | None
    gamma_plus_skipped: tuple[int, ...]
    grid_n: int
    notes: tuple[str, ...]

    @property
    def degenerate(self) -> bool:
        return self.nu is None

    @property
    def lambdas(self) -> tuple[float, ...]:
        return tuple(p.lam for p in self.packs)

    @property
    def s_minus(self) -> tuple[float, ...]:
        return tuple(b.s_minus for b in self.boundaries)

    @property
    def s_plus(self) -> tuple[float, ...]:
        return tuple(b.s_plus for b in self.boundaries)

    @property
    def intervals(self) -> tuple[tuple[float, float], ...]:
        if not self.boundaries:
            return ()
        left = self.boundaries[0].s_minus
        return tuple((left, b.s_plus) for b in self.boundaries)

    def to_text(self) -> str:
        """Key: value report, one line per quantity."""
        lines = [
            f"status: {'degenerate' if self.degenerate else 'ok'}",
            f"d: {self.d:.17g}",
            f"s_in: {self.s_in:.17g}",
            f"packs: {len(self.packs)}",
        ]
        for i, p in enumerate(self.packs, start=1):
            lam = "inf" if math.isinf(p.lam) else f"{p.lam:.17g}"
            lines.append(f"pack_{i}: lambda={lam} ids={','.join(p.ids)}")
        for i, b in enumerate(self.boundaries, start=1):
            lines.append(
                f"boundary_{i}: s_minus={b.s_minus:.17g} s_plus={b.s_plus:.17g} "
                f"gap_min={b.gap_min:.17g} capped={str(b.capped).lower()}"
            )
        if not self.degenerate:
            lines += [
                f"nu: {self.nu:.17g}",
                f"gamma_minus: {self.gamma_minus:.17g}",
                f"gamma_plus: {self.gamma_plus:.17g}",
                f"d_minus: {self.d_minus:.17g}",
                f"d_plus: {self.d_plus:.17g}",
            ]
            for i, iv in enumerate(self.intervals, start=1):
                lines.append(f"interval_{i}: [{iv[0]:.17g}, {iv[1]:.17g}]")
        if self.gamma_plus_skipped:
            skipped = ",".join(str(i + 1) for i in self.gamma_plus_skipped)
            lines.append(f"gamma_plus_skipped_packs: {skipped}")
        lines.append(f"grid_n: {self.grid_n}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        """JSON-safe summary (infinite levels rendered as the string 'inf')."""

        def num(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        return {
            "status": "degenerate" if self.degenerate else "ok",
            "d": self.d,
            "s_in": self.s_in,
            "packs": [{"ids": list(p.ids), "lambda": num(p.lam)} for p in self.packs],
            "boundaries": [
                {
                    "s_minus": b.s_minus,
                    "s_plus": b.s_plus,
                    "gap_min": b.gap_min,
                    "capped": b.capped,
                }
                for b in self.boundaries
            ],
            "nu": self.nu,
            "gamma_minus": self.gamma_minus,
            "gamma_plus": self.gamma_plus,
            "d_minus": self.d_minus,
            "d_plus": self.d_plus,
            "gamma_plus_skipped_packs": [i + 1 for i in self.gamma_plus_skipped],
            "intervals": [list(iv) for iv in self.intervals],
            "grid_n": self.grid_n,
            "notes": list(self.notes),
        }


def _pack_gap(ordered: OrderedSpecies, i: int, s_grid: np.ndarray) -> np.ndarray:
    """Domination gap of pack i over all packs above it, pointwise on a grid.

    Pack-wise means the slowest member of pack i against the fastest member
    of any higher pack, so a positive gap certifies every member pair.
    """
    lower = np.min([g(s_grid) for g in ordered.pack_growths(i)], axis=0)
    uppers = [
        g(s_grid)
        for j in range(i + 1, ordered.n_packs)
        for g in ordered.pack_growths(j)
    ]
    return lower - np.max(uppers, axis=0)


def overshoot_cap(lam_lower: float, s_in: float) -> float:
    """Upper margin stand-in when the next break-even level is out of reach."""
    return max(2.0 * s_in, 2.0 * lam_lower)


def separation_margins(
    ordered: OrderedSpecies,
    i: int,
    s_in: float,
    *,
    grid_n: int = 2048,
    shrink: float = 0.5,
    s_plus_limit: float | None = None,
) -> Boundary:
    """Margins (s_i_minus, s_i_plus) around the boundary between packs i, i+1.

    Starting from symmetric extensions of half the level gap, the extension
    shrinks geometrically until the grid-checked domination gap of pack i
    over all higher packs is positive on [s_i_minus, s_i_plus].  The lower
    margin never crosses zero and the upper one stays below ``s_plus_limit``
    when given (used to keep absorbing intervals nested).

    Raises :class:`CertificateError` when no positive-gap extension exists
    down to the floor, which means the ordering data contradicts the growth
    laws.
    """
    if not 0 <= i < ordered.n_packs - 1:
        raise ParameterError(f"boundary index {i} out of range")
    lam_lo = ordered.pack_lambda(i)
    lam_hi = ordered.pack_lambda(i + 1)
    cap = overshoot_cap(lam_lo, s_in)
    capped = not math.isfinite(lam_hi) or lam_hi > cap
    lam_hi_eff = cap if capped else lam_hi
    if not lam_hi_eff > lam_lo:
        raise CertificateError(
            f"effective upper level {lam_hi_eff:g} does not exceed lower level {lam_lo:g}"
        )

    delta = 0.5 * (lam_hi_eff - lam_lo)
    delta_min = _DELTA_MIN_REL * ordered.pack_lambda(0)
    while True:
        s_minus = lam_lo - min(delta, 0.5 * lam_lo)
        s_plus = lam_hi_eff + delta
        if s_plus_limit is not None and s_plus >= s_plus_limit:
            s_plus = lam_hi_eff + 0.5 * (s_plus_limit - lam_hi_eff)
        grid = np.linspace(s_minus, s_plus, grid_n + 1)
        gap_min = float(np.min(_pack_gap(ordered, i, grid)))
        if gap_min > 0.0:
            return Boundary(
                s_minus=s_minus,
                s_plus=s_plus,
                lam_lower=lam_lo,
                lam_upper_eff=lam_hi_eff,
                capped=capped,
                delta=delta,
                gap_min=gap_min,
            )
        if delta <= delta_min:
            raise CertificateError(
                f"no positive domination gap around boundary {i + 1} down to "
                f"extension {delta_min:g}; growth curves touch between levels "
                f"{lam_lo:g} and {lam_hi_eff:g}, contradicting the strict ordering"
            )
        delta *= shrink


def compute_nu(
    ordered: OrderedSpecies,
    margins: tuple[tuple[float, float], ...],
    grid_n: int = 2048,
) -> float:
    """Uniform domination margin: half the smallest grid gap over all boundaries."""
    if ordered.n_packs < 2:
        raise ParameterError("need at least two packs for a domination margin")
    if len(margins) != ordered.n_packs - 1:
        raise ParameterError("one margin pair per boundary is required")
    worst = math.inf
    for i, (s_minus, s_plus) in enumerate(margins):
        grid = np.linspace(s_minus, s_plus, grid_n + 1)
        worst = min(worst, float(np.min(_pack_gap(ordered, i, grid))))
    if worst <= 0.0:
        raise CertificateError(f"non-positive domination gap {worst:g} on margins")
    return 0.5 * worst


def gamma_bounds(
    ordered: OrderedSpecies,
    margins: tuple[tuple[float, float], ...],
    d: float,
) -> tuple[float, float, tuple[int, ...]]:
    """Rate gaps at the outermost margins.

    gamma_minus is the shortfall of the fastest first-pack law below the
    removal rate at the leftmost margin.  gamma_plus is the smallest excess
    over the removal rate of any lower-pack law at the margin below each
    higher pack; packs with an unreachable break-even level are skipped
    there (their indices are reported, not silently dropped).
    """
    if len(margins) != ordered.n_packs - 1:
        raise ParameterError("one margin pair per boundary is required")
    s1_minus = margins[0][0]
    mu1 = max(g(s1_minus) for g in ordered.pack_growths(0))
    gamma_minus = d - mu1
    if gamma_minus <= 0.0:
        raise CertificateError(
            f"first pack already grows at rate {mu1:g} >= removal rate at s={s1_minus:g}"
        )

    gamma_plus = math.inf
    skipped = []
    for i in range(1, ordered.n_packs):
        if not math.isfinite(ordered.pack_lambda(i)):
            skipped.append(i)
            continue
        s_plus_below = margins[i - 1][1]
        for j in range(i):
            for g in ordered.pack_growths(j):
                excess = g(s_plus_below) - d
                if excess <= 0.0:
                    raise CertificateError(
                        f"pack {j + 1} does not outgrow the removal rate at "
                        f"s={s_plus_below:g} (needed below pack {i + 1})"
                    )
                gamma_plus = min(gamma_plus, excess)
    if not math.isfinite(gamma_plus):
        raise CertificateError("no finite pack above the first; gamma_plus undefined")
    return gamma_minus, gamma_plus, tuple(skipped)


def dilution_bounds(gamma_minus: float, gamma_plus: float, d: float) -> tuple[float, float]:
    """Widened removal-rate bounds d -/+ half the respective rate gap."""
    if not gamma_minus > 0.0 or not gamma_plus > 0.0:
        raise ParameterError("rate gaps must be positive")
    return d - 0.5 * gamma_minus, d + 0.5 * gamma_plus


def build_certificate(
    ordered: OrderedSpecies,
    d: float,
    s_in: float,
    *,
    grid_n: int = 2048,
) -> Certificate:
    """Assemble the full certificate for an ordered species list.

    Raises :class:`WashoutError` when the smallest break-even level is not
    below the inflow concentration (no certificate exists; simulation is
    still meaningful).  Returns a degenerate certificate when fewer than two
    packs have finite break-even levels.
    """
    packs = tuple(
        PackSummary(ids=ordered.pack_ids(i), lam=ordered.pack_lambda(i))
        for i in range(ordered.n_packs)
    )
    lam1 = ordered.pack_lambda(0)
    if not lam1 < s_in:
        raise WashoutError(lam1, s_in)

    notes = []
    for i, p in enumerate(packs):
        if len(p.ids) > 1:
            notes.append(
                f"pack {i + 1} groups {len(p.ids)} species with equal break-even "
                f"levels ({','.join(p.ids)}); only their combined biomass is resolved"
            )

    n_finite = sum(1 for p in packs if math.isfinite(p.lam))
    if n_finite < 2:
        notes.append(
            "degenerate: fewer than two packs with finite break-even levels; "
            "no separation margins to certify"
        )
        return Certificate(
            d=d,
            s_in=s_in,
            packs=packs,
            boundaries=(),
            nu=None,
            gamma_minus=None,
            gamma_plus=None,
            d_minus=None,
            d_plus=None,
            gamma_plus_skipped=(),
            grid_n=grid_n,
            notes=tuple(notes),
        )

    # Build margins from the top boundary down, limiting each upper margin by
    # the one above so the absorbing intervals come out nested.
    boundaries: list[Boundary] = [None] * (ordered.n_packs - 1)  # type: ignore[list-item]
    limit = None
    for i in range(ordered.n_packs - 2, -1, -1):
        b = separation_margins(ordered, i, s_in, grid_n=grid_n, s_plus_limit=limit)
        boundaries[i] = b
        limit = b.s_plus
        if b.capped:
            notes.append(
                f"boundary {i + 1}: upper break-even level unreachable, used "
                f"overshoot cap {b.lam_upper_eff:g}"
            )

    margins = tuple((b.s_minus, b.s_plus) for b in boundaries)
    nu = compute_nu(ordered, margins, grid_n=grid_n)
    gamma_minus, gamma_plus, skipped = gamma_bounds(ordered, margins, d)
    d_minus, d_plus = dilution_bounds(gamma_minus, gamma_plus, d)
    if not 0.0 < d_minus < d < d_plus:
        raise CertificateError(
            f"dilution bounds ({d_minus:g}, {d_plus:g}) do not straddle {d:g}"
        )
    if skipped:
        notes.append(
            "gamma_plus skipped packs with unreachable break-even levels: "
            + ",".join(str(i + 1) for i in skipped)
        )

    cert = Certificate(
        d=d,
        s_in=s_in,
        packs=packs,
        boundaries=tuple(boundaries),
        nu=nu,
        gamma_minus=gamma_minus,
        gamma_plus=gamma_plus,
        d_minus=d_minus,
        d_plus=d_plus,
        gamma_plus_skipped=skipped,
        grid_n=grid_n,
        notes=tuple(notes),
    )
    problems = recheck_certificate(cert, ordered, grid_factor=1)
    if problems:
        raise CertificateError("certificate failed self-check: " + "; ".join(problems))
    return cert


def recheck_certificate(
    cert: Certificate,
    ordered: OrderedSpecies,
    *,
    grid_factor: int = 10,
) -> list[str]:
    """Re-verify every certificate inequality on a refined grid.

    Returns a list of violation descriptions (empty when the certificate
    holds).  Used both as a construction self-check and as an independent
    robustness gate with a finer grid.
    """
    problems: list[str] = []
    if cert.degenerate:
        return problems
    grid_n = cert.grid_n * grid_factor

    prev_plus = None
    for i, b in enumerate(cert.boundaries):
        if not 0.0 < b.s_minus < b.lam_lower:
            problems.append(f"boundary {i + 1}: s_minus {b.s_minus:g} not in (0, lambda)")
        if not b.s_plus > b.lam_upper_eff:
            problems.append(f"boundary {i + 1}: s_plus {b.s_plus:g} not above upper level")
        if prev_plus is not None and not b.s_plus > prev_plus:
            problems.append(f"boundary {i + 1}: absorbing intervals not nested")
        prev_plus = b.s_plus
        grid = np.linspace(b.s_minus, b.s_plus, grid_n + 1)
        gap = _pack_gap(ordered, i, grid)
        if not float(np.min(gap)) > cert.nu:
            problems.append(
                f"boundary {i + 1}: domination gap {float(np.min(gap)):g} does not "
                f"exceed nu {cert.nu:g} on the refined grid"
            )

    margins = tuple((b.s_minus, b.s_plus) for b in cert.boundaries)
    try:
        gamma_minus, gamma_plus, skipped = gamma_bounds(ordered, margins, cert.d)
    except CertificateError as exc:
        problems.append(str(exc))
        return problems
    if abs(gamma_minus - cert.gamma_minus) > 1e-12 * max(1.0, abs(cert.gamma_minus)):
        problems.append("gamma_minus does not match its recomputation")
    if abs(gamma_plus - cert.gamma_plus) > 1e-12 * max(1.0, abs(cert.gamma_plus)):
        problems.append("gamma_plus does not match its recomputation")
    if skipped != cert.gamma_plus_skipped:
        problems.append("gamma_plus pack exclusions do not match")
    d_minus, d_plus = dilution_bounds(gamma_minus, gamma_plus, cert.d)
    if abs(d_minus - cert.d_minus) > 1e-12 or abs(d_plus - cert.d_plus) > 1e-12:
        problems.append("dilution bounds do not match their recomputation")
    if not 0.0 < cert.d_minus < cert.d < cert.d_plus:
        problems.append("dilution bounds do not straddle the removal rate")

    # Lower packs must outgrow the removal rate at every higher boundary's
    # upper margin (the chain that makes gamma_plus meaningful).
    for i in range(1, len(cert.boundaries) + 1):
        if not math.isfinite(ordered.pack_lambda(i)):
            continue
        s_plus_below = cert.boundaries[i - 1].s_plus
        for j in range(i):
            for g in ordered.pack_growths(j):
                if not g(s_plus_below) > cert.d:
                    problems.append(
                        f"pack {j + 1} fails to outgrow the removal rate at "
                        f"s={s_plus_below:g}"
                    )
    return problems
