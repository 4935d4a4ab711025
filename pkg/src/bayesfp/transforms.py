"""Fractional-polynomial transforms and (interaction) features.

A :class:`Feature` is a product of one or more ``(predictor, Transform)``
factors. Features compare equal regardless of the order in which the factors
were supplied, and render to stable strings such as ``x3^(-0.5)``,
``log(x6)``, ``x3^(-0.5)*log(x3)`` or ``x1^(0.5)*x3^(-0.5)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

POWERS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)
SHIFT_EPS = 1e-5


class DomainError(ValueError):
    """A transform was asked to evaluate outside its support."""


@dataclass(frozen=True, order=True)
class Transform:
    power: float
    log_multiplier: bool = False

    def __post_init__(self):
        if float(self.power) not in POWERS:
            raise ValueError(f"power {self.power} is not an FP power {POWERS}")
        object.__setattr__(self, "power", float(self.power))

    @property
    def fp_class(self) -> int:
        """0 for the identity, 1 for plain powers, 2 for log-multiplied forms."""
        if self.log_multiplier:
            return 2
        return 0 if self.power == 1.0 else 1

    @property
    def needs_positive(self) -> bool:
        return self.log_multiplier or self.power <= 0 or self.power != int(self.power)

    def label(self, name: str) -> str:
        if self.power == 0.0:
            base = f"log({name})"
        elif self.power == 1.0:
            base = name
        else:
            base = f"{name}^({_fmt_power(self.power)})"
        return f"{base}*log({name})" if self.log_multiplier else base


IDENTITY = Transform(1.0)
F1 = tuple(Transform(p) for p in POWERS if p != 1.0)
F2 = tuple(Transform(p, True) for p in POWERS)
ALL_TRANSFORMS = (IDENTITY,) + F1 + F2


def _fmt_power(p: float) -> str:
    return str(int(p)) if p == int(p) else repr(p)


def required_shift(x) -> float:
    """Shift that makes ``x`` strictly positive (0 if it already is)."""
    x = np.asarray(x, dtype=np.float64)
    lo = float(np.min(x))
    return 0.0 if lo > 0 else -lo + SHIFT_EPS


def apply_transform(x, t: Transform, shift: float = 0.0) -> np.ndarray:
    """Evaluate ``(x + shift)^p``, times ``log(x + shift)`` for F2 forms.

    Power 0 is the natural log. Raises :class:`DomainError` instead of
    returning NaN when the shifted argument leaves the transform's support.
    """
    z = np.asarray(x, dtype=np.float64) + shift
    if t.needs_positive and np.any(z <= 0):
        raise DomainError(
            f"transform {t.label('x')} needs a positive argument; min(x + shift) = {np.min(z):g}"
        )
    if t.power == 0.0:
        out = np.log(z)
    elif t.power == 1.0:
        out = z.copy()
    elif t.power == 0.5:
        out = np.sqrt(z)
    elif t.power == -0.5:
        out = 1.0 / np.sqrt(z)
    else:
        out = z ** t.power
    if t.log_multiplier:
        out = out * np.log(z)
    return out


Factor = Tuple[str, Transform]


def _canonical(factors: Iterable[Factor]) -> Tuple[Factor, ...]:
    """Sort factors and fold ``x^p * log(x)`` pairs into the F2 form ``x^p log x``.

    F2 factors are first unfolded into a power and a log, then logs pair with
    the lowest powers. Every way of writing the same product thus lands on
    one key, which also makes the rendered strings parse back unambiguously.
    """
    log_t = Transform(0.0)
    by_name = {}
    for name, t in factors:
        ts = by_name.setdefault(name, [])
        if t.log_multiplier:
            ts.extend((Transform(t.power), log_t))
        else:
            ts.append(t)
    out: List[Factor] = []
    for name in sorted(by_name):
        ts = by_name[name]
        logs = sum(1 for t in ts if t == log_t)
        plain = sorted(t for t in ts if t != log_t)
        folded: List[Transform] = []
        while logs and plain:
            folded.append(Transform(plain.pop(0).power, True))
            logs -= 1
        while logs >= 2:
            folded.append(Transform(0.0, True))
            logs -= 2
        plain += [log_t] * logs
        out.extend((name, t) for t in sorted(plain + folded))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Feature:
    """Product of FP-transformed predictors; order 1 is a plain FP term.

    Features are immutable, so the hash, sort key and label are computed
    once at construction; the search compares and hashes them constantly.
    """

    factors: Tuple[Factor, ...]

    def __init__(self, factors: Iterable[Factor]):
        fs = _canonical(factors)
        if not fs:
            raise ValueError("a feature needs at least one factor")
        object.__setattr__(self, "factors", fs)
        object.__setattr__(self, "_key", (len(fs), tuple((n, t.log_multiplier, t.power) for n, t in fs)))
        object.__setattr__(self, "_str", "*".join(t.label(name) for name, t in fs))
        object.__setattr__(self, "_hash", hash(fs))
        object.__setattr__(self, "fp_classes", tuple(t.fp_class for _, t in fs))

    def __reduce__(self):
        return (Feature, (self.factors,))

    @classmethod
    def single(cls, name: str, t: Transform = IDENTITY) -> "Feature":
        return cls([(name, t)])

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def predictors(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(name for name, _ in self.factors))

    def __mul__(self, other: "Feature") -> "Feature":
        return Feature(self.factors + other.factors)

    def __eq__(self, other) -> bool:
        return isinstance(other, Feature) and self._key == other._key

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: "Feature") -> bool:
        return self._key < other._key

    @property
    def sort_key(self):
        return self._key

    def __str__(self) -> str:
        return self._str

    def __repr__(self) -> str:
        return f"Feature({self._str!r})"


_TOKEN = re.compile(r"^(?:log\((?P<log>.+)\)|(?P<pow>.+)\^\((?P<p>[-0-9.]+)\)|(?P<id>.+))$")


def parse_feature(text: str) -> Feature:
    """Inverse of ``str(feature)``."""
    factors: List[Factor] = []
    for tok in _split_top(text.strip()):
        m = _TOKEN.match(tok)
        if m is None:
            raise ValueError(f"cannot parse feature token {tok!r}")
        if m.group("log") is not None:
            factors.append((m.group("log"), Transform(0.0)))
        elif m.group("pow") is not None:
            factors.append((m.group("pow"), Transform(float(m.group("p")))))
        else:
            factors.append((m.group("id"), IDENTITY))
    return Feature(factors)


def _split_top(text: str) -> List[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "*" and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p for p in parts if p]


def evaluate_feature(f: Feature, ds) -> np.ndarray:
    """Column of ``f`` on dataset ``ds`` using the dataset's recorded shifts."""
    out = None
    for name, t in f.factors:
        col = ds.column(name)
        if t != IDENTITY and not col.admits_transforms:
            raise DomainError(f"{col.kind} predictor {name!r} admits only the identity transform")
        try:
            v = apply_transform(col.values, t, col.shift)
        except DomainError as exc:
            raise DomainError(f"feature {f}: {exc}") from None
        out = v if out is None else out * v
    return out


def enumerate_terms(ds, order_cap: int = 1) -> List[Feature]:
    """Order-1 feature universe: 16 FP terms per continuous predictor, identity otherwise.

    Interactions are never enumerated up front; ``order_cap`` only has to be
    at least 1 and is accepted for interface symmetry with the search.
    """
    if order_cap < 1:
        raise ValueError("order_cap must be >= 1")
    out = []
    for col in ds.columns:
        if col.admits_transforms:
            out.extend(Feature.single(col.name, t) for t in ALL_TRANSFORMS)
        else:
            out.append(Feature.single(col.name))
    return out
