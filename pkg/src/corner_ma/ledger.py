"""Corner exponents: the linear set {i/mu}, the quadratic set, and their merge.

Every exponent is stored with an integer lattice pair (k, m) meaning
k/mu - 2m.  When the cone opening is rational all membership and collision
decisions are made on exact fractions.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

from .cone import ConeGeometry, Regime

FLOAT_TOL = 1e-9


@dataclass(frozen=True)
class ExponentEntry:
    lattice: Tuple[int, int]
    value: float
    exact: Optional[Fraction] = None
    in_I1: Optional[int] = None
    in_I2: Tuple[Tuple[int, int], ...] = ()
    position: int = 0
    max_log_power: int = 0
    forced_zero: bool = False

    @property
    def resonant(self) -> bool:
        return self.in_I1 is not None

    def key(self):
        return self.exact if self.exact is not None else self.value


class HolderLabel(NamedTuple):
    k: int
    alpha: float
    integer_case: bool = False


def lattice_value(lattice: Tuple[int, int], cone: ConeGeometry):
    """Return (float value, exact Fraction or None) of k/mu - 2m."""
    k, m = lattice
    if cone.mu_rational is not None:
        exact = Fraction(k) / cone.mu_rational - 2 * m
        return float(exact), exact
    return k / cone.mu - 2 * m, None


def _enumerate_I2(cone: ConeGeometry, cutoff: float):
    """Yield ((i, j), lattice) for quadratic-set exponents up to ``cutoff``."""
    inv = 1.0 / cone.mu
    slack = 1e-9
    if cone.regime is Regime.SHARP:
        step, i_min, j_mult = inv - 2.0, 1, 1
    else:
        step, i_min, j_mult = 2.0 * (inv - 1.0), 2, 2
    i = i_min
    while i * inv + step <= cutoff + slack:
        j = 1
        while i * inv + step * j <= cutoff + slack:
            yield (i, j), (i + j_mult * j, j)
            j += 1
        i += 1


@dataclass(frozen=True)
class ExponentLedger:
    cone: ConeGeometry
    cutoff: float
    entries: Tuple[ExponentEntry, ...] = field(default_factory=tuple)

    def __iter__(self) -> Iterator[ExponentEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx) -> ExponentEntry:
        return self.entries[idx]

    @property
    def values(self) -> List[float]:
        return [e.value for e in self.entries]

    def find(self, value, exact: Optional[Fraction] = None) -> Optional[ExponentEntry]:
        """Entry equal to ``value`` (exact comparison when both sides are rational)."""
        for e in self.entries:
            if exact is not None and e.exact is not None:
                if e.exact == exact:
                    return e
            elif abs(e.value - value) <= FLOAT_TOL * max(1.0, abs(value)):
                return e
        return None

    def find_lattice(self, lattice: Tuple[int, int]) -> Optional[ExponentEntry]:
        value, exact = lattice_value(lattice, self.cone)
        return self.find(value, exact)

    def next_after(self, value: float) -> Optional[ExponentEntry]:
        for e in self.entries:
            if e.value > value + FLOAT_TOL * max(1.0, abs(value)):
                return e
        return None

    def to_rows(self) -> List[dict]:
        rows = []
        for e in self.entries:
            rows.append({
                "position": e.position,
                "value": e.value,
                "lattice": f"({e.lattice[0]},{e.lattice[1]})",
                "I1": "" if e.in_I1 is None else str(e.in_I1),
                "I2": " ".join(f"({i},{j})" for i, j in e.in_I2),
                "resonant": e.resonant,
                "max_log_power": e.max_log_power,
                "forced_zero": e.forced_zero,
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("position,value,lattice,I1,I2,resonant,max_log_power,forced_zero\n")
        for r in self.to_rows():
            buf.write(f"{r['position']},{r['value']:.17g},\"{r['lattice']}\",{r['I1']},"
                      f"\"{r['I2']}\",{str(r['resonant']).lower()},{r['max_log_power']},"
                      f"{str(r['forced_zero']).lower()}\n")
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'pos':>4}  {'value':>12}  {'lattice':>9}  {'I1':>4}  {'I2 witnesses':<24} {'res':>4}  {'logmax':>6}"
        lines = [head, "-" * len(head)]
        for r in self.to_rows():
            tag = " (forced 0)" if r["forced_zero"] else ""
            lines.append(f"{r['position']:>4}  {r['value']:>12.8g}  {r['lattice']:>9}  {r['I1']:>4}  "
                         f"{r['I2']:<24} {'yes' if r['resonant'] else 'no':>4}  {r['max_log_power']:>6}{tag}")
        return "\n".join(lines)


def build_ledger(cone: ConeGeometry, cutoff: float) -> ExponentLedger:
    """Enumerate the merged exponent set up to ``cutoff``, sorted and deduplicated."""
    first = 1.0 / cone.mu
    if not cutoff > first:
        raise ValueError(f"empty ledger: cutoff {cutoff} must exceed 1/mu = {first}")

    # candidate lattices with their witnesses
    cands: List[Tuple[Tuple[int, int], Optional[int], Optional[Tuple[int, int]]]] = []
    i = 1
    while i * first <= cutoff + 1e-9:
        cands.append(((i, 0), i, None))
        i += 1
    for witness, lattice in _enumerate_I2(cone, cutoff):
        cands.append((lattice, None, witness))

    groups: Dict[object, dict] = {}
    order = []
    for lattice, i1, i2 in cands:
        value, exact = lattice_value(lattice, cone)
        if value > cutoff:
            continue
        key = exact if exact is not None else None
        slot = None
        if key is not None:
            slot = groups.get(key)
        else:
            for g in order:
                if abs(groups[g]["value"] - value) <= FLOAT_TOL * max(1.0, value):
                    slot = groups[g]
                    break
        if slot is None:
            key = key if key is not None else len(order)
            slot = {"value": value, "exact": exact, "lattice": lattice, "I1": None, "I2": []}
            groups[key] = slot
            order.append(key)
        if i1 is not None:
            slot["I1"] = i1
            slot["lattice"] = lattice
            slot["value"], slot["exact"] = value, exact
        if i2 is not None:
            slot["I2"].append(i2)

    slots = sorted(groups.values(), key=lambda s: (s["exact"] if s["exact"] is not None else s["value"]))
    entries = []
    sharp = cone.regime is Regime.SHARP
    for pos, s in enumerate(slots, start=1):
        bound = pos - 1 if sharp else max(pos - 2, 0)
        entries.append(ExponentEntry(
            lattice=s["lattice"], value=s["value"], exact=s["exact"], in_I1=s["I1"],
            in_I2=tuple(sorted(s["I2"])), position=pos, max_log_power=bound,
            forced_zero=(not sharp and pos == 1),
        ))
    return ExponentLedger(cone, float(cutoff), tuple(entries))


def is_resonant(entry: ExponentEntry, cone: ConeGeometry) -> bool:
    """True when the exponent also lies in {i/mu}."""
    if cone.mu_rational is not None:
        k, m = entry.lattice
        # k/mu - 2m = i/mu  <=>  i = k - 2m*mu must be a positive integer
        i = Fraction(k) - 2 * m * cone.mu_rational
        return i.denominator == 1 and i > 0
    value = entry.value
    n = round(value * cone.mu)
    return n >= 1 and abs(value - n / cone.mu) < FLOAT_TOL


def holder_label(cone: ConeGeometry) -> HolderLabel:
    """Optimal Hölder class C^{k, alpha} at a sharp corner: k = floor(1/mu)."""
    if cone.regime is not Regime.SHARP:
        raise ValueError("holder label not applicable: opening fraction must be below 1/2")
    if cone.mu_rational is not None:
        inv = 1 / cone.mu_rational
        k = math.floor(inv)
        alpha = float(inv - k)
    else:
        inv = 1.0 / cone.mu
        k = math.floor(inv + 1e-12)
        alpha = max(inv - k, 0.0)
        if alpha < 1e-12:
            alpha = 0.0
    integer_case = alpha == 0.0
    if integer_case:
        warnings.warn(f"1/mu = {k} is an integer; the Hölder label is only an upper bound here",
                      RuntimeWarning, stacklevel=2)
    return HolderLabel(int(k), alpha, integer_case)
