"""Order-by-order construction of the corner expansion of v = u - |x|^2/2.

A term is c(theta) t^j e^{-gamma t} on the strip, i.e. c(theta) r^gamma
(-ln r)^j.  In strip variables the equation reads

    Lap~ v~ = -e^{2t} [(v_tt + v_t)(v_thth - v_t) - (v_tth + v_th)^2]

so two terms with rates a and b feed the rate a + b - 2.  Each extension
step collects the quadratic source at the next ledger exponent and inverts
the linear part with :func:`~corner_ma.ode.resonant_lift`.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .cone import ConeGeometry, StripField, strip_grid
from .ledger import ExponentEntry, ExponentLedger, FLOAT_TOL
from .ode import DEFAULT_NODES, ThetaProfile, resonant_lift

SCHEMA_VERSION = 1


class ExpansionError(RuntimeError):
    pass


class MissingCoefficientError(ExpansionError, KeyError):
    pass


@dataclass(frozen=True, eq=False)
class ExpansionTerm:
    exponent: ExponentEntry
    log_power: int
    profile: ThetaProfile

    def __post_init__(self):
        if self.log_power < 0:
            raise ValueError("log power must be nonnegative")
        if self.log_power > self.exponent.max_log_power:
            raise ExpansionError(f"log power {self.log_power} exceeds the bound "
                                 f"{self.exponent.max_log_power} at exponent {self.exponent.value}")
        v = self.profile.values
        if v[0] != 0.0 or v[-1] != 0.0:
            raise ValueError("expansion profiles must vanish at both edges")

    @property
    def rate(self) -> float:
        return self.exponent.value

    def evaluate(self, t, theta) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.profile(theta) * t ** self.log_power * np.exp(-self.rate * t)


@dataclass(frozen=True)
class Expansion:
    cone: ConeGeometry
    terms: Tuple[ExpansionTerm, ...] = ()
    truncation: float = 0.0

    def __post_init__(self):
        terms = tuple(sorted(self.terms, key=lambda s: (s.exponent.value, s.log_power)))
        seen = set()
        for s in terms:
            key = (s.exponent.position, s.log_power)
            if key in seen:
                raise ValueError(f"duplicate term at exponent {s.exponent.value}, power {s.log_power}")
            seen.add(key)
        object.__setattr__(self, "terms", terms)

    @classmethod
    def empty(cls, cone: ConeGeometry) -> "Expansion":
        return cls(cone, (), 0.0)

    def __len__(self) -> int:
        return len(self.terms)

    def exponents(self) -> List[ExponentEntry]:
        out = []
        for s in self.terms:
            if not out or out[-1].position != s.exponent.position:
                out.append(s.exponent)
        return out

    def term(self, position: int, log_power: int = 0) -> Optional[ExpansionTerm]:
        for s in self.terms:
            if s.exponent.position == position and s.log_power == log_power:
                return s
        return None

    def truncated(self, stage: int) -> "Expansion":
        """Keep the first ``stage`` distinct exponents."""
        keep = {e.position for e in self.exponents()[:stage]}
        kept = tuple(s for s in self.terms if s.exponent.position in keep)
        trunc = max((s.rate for s in kept), default=0.0)
        return Expansion(self.cone, kept, trunc)

    def log_powers(self, rel_tol: float = 1e-9) -> Dict[float, List[int]]:
        """Log powers that actually arise, per exponent value.

        A power counts when its profile exceeds ``rel_tol`` times the largest
        profile at the same exponent; lifts of a source with no resonant
        component leave round-off sized profiles that are not reported.
        """
        scale: Dict[int, float] = defaultdict(float)
        for s in self.terms:
            scale[s.exponent.position] = max(scale[s.exponent.position], s.profile.sup())
        out: Dict[float, List[int]] = defaultdict(list)
        for s in self.terms:
            if s.profile.sup() > rel_tol * scale[s.exponent.position]:
                out[s.rate].append(s.log_power)
        return dict(out)

    def evaluate_at(self, t, theta) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros(np.broadcast(t, np.asarray(theta)).shape)
        for s in self.terms:
            total = total + s.evaluate(t, theta)
        return total

    # -- serialisation --

    def to_dict(self) -> dict:
        nodes = self.terms[0].profile.nodes.tolist() if self.terms else []
        terms = []
        for s in self.terms:
            e = s.exponent
            terms.append({
                "exponent_value": e.value,
                "exponent_exact": None if e.exact is None else [e.exact.numerator, e.exact.denominator],
                "lattice": list(e.lattice),
                "position": e.position,
                "in_I1": e.in_I1,
                "in_I2": [list(w) for w in e.in_I2],
                "max_log_power": e.max_log_power,
                "log_power": s.log_power,
                "profile_nodes": s.profile.values.tolist(),
            })
        return {
            "schema_version": SCHEMA_VERSION,
            "cone": self.cone.describe(),
            "truncation": self.truncation,
            "theta_nodes": nodes,
            "terms": terms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Expansion":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported expansion schema version {doc.get('schema_version')!r}")
        c = doc["cone"]
        if "mu_rational" in c:
            cone = ConeGeometry(c["mu"], Fraction(*c["mu_rational"]))
        else:
            cone = ConeGeometry(c["mu"])
        terms = []
        for t in doc["terms"]:
            exact = None if t["exponent_exact"] is None else Fraction(*t["exponent_exact"])
            entry = ExponentEntry(
                lattice=tuple(t["lattice"]), value=t["exponent_value"], exact=exact,
                in_I1=t["in_I1"], in_I2=tuple(tuple(w) for w in t["in_I2"]),
                position=t["position"], max_log_power=t["max_log_power"],
                forced_zero=False,
            )
            terms.append(ExpansionTerm(entry, t["log_power"], ThetaProfile(cone, np.array(t["profile_nodes"]))))
        return cls(cone, tuple(terms), doc["truncation"])

    @classmethod
    def from_json(cls, text: str) -> "Expansion":
        return cls.from_dict(json.loads(text))


# -- polynomial-in-t algebra with theta-profile coefficients ------------------

Poly = Dict[int, np.ndarray]


def _add(p: Poly, power: int, arr: np.ndarray) -> None:
    if power < 0:
        return
    if power in p:
        p[power] = p[power] + arr
    else:
        p[power] = arr


def _mul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for pa, ca in a.items():
        for pb, cb in b.items():
            _add(out, pa + pb, ca * cb)
    return out


def _pieces(s: ExpansionTerm):
    """Strip-derivative combinations (v_tt + v_t, v_thth - v_t, v_tth + v_th) of one term."""
    g, j = s.rate, s.log_power
    c = s.profile.values
    c1 = s.profile.derivative(1).values
    c2 = s.profile.derivative(2).values
    p: Poly = {}
    _add(p, j, (g * g - g) * c)
    _add(p, j - 1, (j - 2.0 * g * j) * c)
    _add(p, j - 2, float(j * (j - 1)) * c)
    q: Poly = {}
    _add(q, j, c2 + g * c)
    _add(q, j - 1, -float(j) * c)
    r: Poly = {}
    _add(r, j, (1.0 - g) * c1)
    _add(r, j - 1, float(j) * c1)
    return p, q, r


@dataclass(frozen=True)
class SourceTerm:
    value: float
    exact: Optional[Fraction]
    lattice: Tuple[int, int]
    log_power: int
    profile: ThetaProfile


def _exp_key(value: float, exact: Optional[Fraction]):
    return exact if exact is not None else round(value / FLOAT_TOL) * FLOAT_TOL


def _pair_sources(e: Expansion, cutoff: Optional[float]):
    """Group -e^{2t} * bracket(v, v) by exponent; returns {key: (value, exact, lattice, Poly)}."""
    cache = [_pieces(s) for s in e.terms]
    groups: Dict[object, list] = {}
    n = len(e.terms)
    for a in range(n):
        for b in range(a, n):
            sa, sb = e.terms[a], e.terms[b]
            value = sa.rate + sb.rate - 2.0
            exact = None
            if sa.exponent.exact is not None and sb.exponent.exact is not None:
                exact = sa.exponent.exact + sb.exponent.exact - 2
                value = float(exact)
            if cutoff is not None and value > cutoff + FLOAT_TOL * max(1.0, cutoff):
                continue
            pa, qa, ra = cache[a]
            pb, qb, rb = cache[b]
            if a == b:
                contrib = _mul(pa, qa)
                for k, v in _mul(ra, ra).items():
                    _add(contrib, k, -v)
            else:
                contrib = _mul(pa, qb)
                for k, v in _mul(pb, qa).items():
                    _add(contrib, k, v)
                for k, v in _mul(ra, rb).items():
                    _add(contrib, k, -2.0 * v)
            key = _exp_key(value, exact)
            lattice = (sa.exponent.lattice[0] + sb.exponent.lattice[0],
                       sa.exponent.lattice[1] + sb.exponent.lattice[1] + 1)
            slot = groups.setdefault(key, [value, exact, lattice, {}])
            for k, v in contrib.items():
                _add(slot[3], k, -v)
    return groups


def quadratic_source(e: Expansion, cutoff: float) -> List[SourceTerm]:
    """Terms of e^{-2t} F0(v) = -e^{2t} det D^2 v for v the expansion, up to ``cutoff``."""
    out = []
    for key, (value, exact, lattice, poly) in _pair_sources(e, cutoff).items():
        for power in sorted(poly):
            out.append(SourceTerm(value, exact, lattice, power, ThetaProfile(e.cone, poly[power])))
    out.sort(key=lambda s: (s.value, s.log_power))
    return out


def _same_exponent(entry: ExponentEntry, value: float, exact: Optional[Fraction]) -> bool:
    if entry.exact is not None and exact is not None:
        return entry.exact == exact
    return abs(entry.value - value) <= FLOAT_TOL * max(1.0, abs(value))


def _lookup_free(free: Mapping, entry: ExponentEntry) -> Optional[float]:
    for k, v in free.items():
        if abs(float(k) - entry.value) <= FLOAT_TOL * max(1.0, entry.value):
            return float(v)
    return None


def extend(ledger: ExponentLedger, e: Expansion, free_coefficients: Mapping[float, float]) -> Expansion:
    """Append every term at the next ledger exponent after ``e.truncation``.

    The forced part solves Lap~ v = (quadratic source at that exponent).  At
    exponents in {i/mu} the coefficient of the homogeneous solution
    sin(i theta/mu) is taken from ``free_coefficients`` (keyed by exponent
    value); it is not determined by the local problem.
    """
    if ledger.cone != e.cone:
        raise ValueError("ledger and expansion belong to different cones")
    nxt = ledger.next_after(e.truncation) if e.terms or e.truncation > 0 else ledger[0]
    if nxt is None:
        raise ExpansionError(f"ledger exhausted beyond {e.truncation}; rebuild with a larger cutoff")
    n_nodes = e.terms[0].profile.n if e.terms else DEFAULT_NODES

    groups = _pair_sources(e, nxt.value)
    hs: Dict[int, np.ndarray] = {}
    for key, (value, exact, lattice, poly) in groups.items():
        if _same_exponent(nxt, value, exact):
            for p, arr in poly.items():
                _add(hs, p, arr)
        elif value > e.truncation + FLOAT_TOL * max(1.0, value):
            raise ExpansionError(f"source at exponent {value} (lattice {lattice}) is absent from the ledger")

    new_terms = list(e.terms)
    if nxt.forced_zero:
        if hs and any(np.any(v != 0) for v in hs.values()):
            raise ExpansionError("nonzero source at an exponent whose coefficient is forced to zero")
        if _lookup_free(free_coefficients, nxt):
            raise ValueError(f"coefficient at exponent {nxt.value} is forced to zero in this regime")
        return Expansion(e.cone, tuple(new_terms), nxt.value)

    profiles: List[ThetaProfile] = []
    if hs:
        top = max(hs)
        sources = [ThetaProfile(e.cone, hs.get(p, np.zeros(n_nodes))) for p in range(top + 1)]
        profiles = resonant_lift(nxt.value, sources)
    if nxt.resonant:
        coef = _lookup_free(free_coefficients, nxt)
        if coef is None:
            raise MissingCoefficientError(f"free coefficient required at resonant exponent {nxt.value}")
        kernel = coef * ThetaProfile.sine(e.cone, nxt.in_I1, n_nodes)
        profiles = [kernel + profiles[0]] + profiles[1:] if profiles else [kernel]

    for power, prof in enumerate(profiles):
        if np.any(prof.values != 0.0):
            new_terms.append(ExpansionTerm(nxt, power, prof))
    return Expansion(e.cone, tuple(new_terms), nxt.value)


def build_expansion(ledger: ExponentLedger, free_coefficients: Mapping[float, float],
                    upto: Optional[float] = None) -> Expansion:
    """Extend from the empty expansion through every ledger exponent <= ``upto``."""
    upto = ledger.cutoff if upto is None else upto
    e = Expansion.empty(ledger.cone)
    while True:
        nxt = ledger.next_after(e.truncation) if e.truncation > 0 else ledger[0]
        if nxt is None or nxt.value > upto + FLOAT_TOL * max(1.0, upto):
            return e
        e = extend(ledger, e, free_coefficients)


def evaluate(e: Expansion, window: Sequence[float], resolution) -> StripField:
    """Sum the terms on a uniform strip grid."""
    t, th = strip_grid(e.cone, window, resolution)
    tt, thth = np.meshgrid(t, th, indexing="ij")
    vals = np.zeros_like(tt)
    for s in e.terms:
        prof = s.profile(th)
        vals += (t ** s.log_power * np.exp(-s.rate * t))[:, None] * prof[None, :]
    vals[:, 0] = 0.0
    vals[:, -1] = 0.0
    return StripField(e.cone, t, th, vals)


def strip_residual(e: Expansion) -> List[SourceTerm]:
    """Exact term list of Lap~ v~ - e^{-2t} F0(v)~ for v~ the expansion (all orders)."""
    groups = _pair_sources(e, None)
    lap: Dict[object, list] = {}
    for s in e.terms:
        g, j = s.rate, s.log_power
        c = s.profile.values
        c2 = s.profile.derivative(2).values
        key = _exp_key(s.exponent.value, s.exponent.exact)
        slot = lap.setdefault(key, [s.exponent.value, s.exponent.exact, s.exponent.lattice, {}])
        _add(slot[3], j, g * g * c + c2)
        _add(slot[3], j - 1, -2.0 * g * j * c)
        _add(slot[3], j - 2, float(j * (j - 1)) * c)
    for key, (value, exact, lattice, poly) in groups.items():
        slot = lap.setdefault(key, [value, exact, lattice, {}])
        for p, arr in poly.items():
            _add(slot[3], p, -arr)
    out = []
    for value, exact, lattice, poly in lap.values():
        for p in sorted(poly):
            prof = poly[p].copy()
            prof[0] = prof[-1] = 0.0
            out.append(SourceTerm(value, exact, lattice, p, ThetaProfile(e.cone, prof)))
    out.sort(key=lambda s: (s.value, s.log_power))
    return out


def evaluate_terms(terms: Sequence[SourceTerm], t, theta) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    total = np.zeros(np.broadcast(t, np.asarray(theta)).shape)
    for s in terms:
        total = total + s.profile(theta) * t ** s.log_power * np.exp(-s.value * t)
    return total
