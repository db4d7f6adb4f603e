"""System parameters, policy taxonomy and the QP-vs-TP discriminant."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import (
    LengthMismatch,
    NegativeCost,
    NonPositiveDiffusion,
    NonPositiveDrift,
    NonPositiveFixedCost,
    NonPositiveParameter,
    NonPositiveWeight,
    ParseError,
    ZeroCycle,
)

# |value| at or below this fraction of the term scale counts as zero
DISCRIMINANT_RTOL = 1e-12


def _readonly(x, name: str) -> np.ndarray:
    try:
        arr = np.array(x, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{name} is not a numeric vector: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemParams:
    """The n-item model: N_i(t) = d_i t + sigma_i B_i(t), independent B_i.

    Aggregates (``total_drift``, ``total_var``, ``w_drift``, ``w2_var``,
    ``c_drift``) are filled in on construction; invalid input raises a
    :class:`~clearing_lab.errors.ValidationError` subclass.
    """

    d: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    a_d: float
    c: np.ndarray = None

    total_drift: float = field(init=False)
    total_var: float = field(init=False)
    w_drift: float = field(init=False)
    w2_var: float = field(init=False)
    c_drift: float = field(init=False)

    def __post_init__(self):
        set_ = object.__setattr__
        d = _readonly(self.d, "d")
        set_(self, "d", d)
        set_(self, "sigma", _readonly(self.sigma, "sigma"))
        set_(self, "omega", _readonly(self.omega, "omega"))
        c = np.zeros_like(d) if self.c is None else self.c
        set_(self, "c", _readonly(c, "c"))
        set_(self, "a_d", float(self.a_d))
        _check(self)
        set_(self, "total_drift", float(self.d.sum()))
        set_(self, "total_var", float(np.sum(self.sigma**2)))
        set_(self, "w_drift", float(np.sum(self.omega * self.d)))
        set_(self, "w2_var", float(np.sum(self.omega**2 * self.sigma**2)))
        set_(self, "c_drift", float(np.sum(self.c * self.d)))

    @property
    def n(self) -> int:
        return len(self.d)

    def to_dict(self) -> dict:
        return {
            "d": self.d.tolist(),
            "sigma": self.sigma.tolist(),
            "c": self.c.tolist(),
            "omega": self.omega.tolist(),
            "a_d": self.a_d,
        }

    def permuted(self, order) -> "SystemParams":
        order = np.asarray(order)
        return SystemParams(
            self.d[order], self.sigma[order], self.omega[order], self.a_d, self.c[order]
        )

    def __repr__(self):
        body = ", ".join(f"{k}={v}" for k, v in self.to_dict().items())
        return f"SystemParams({body})"


def _check(p: SystemParams) -> None:
    n = len(p.d)
    if n < 1:
        raise LengthMismatch("at least one item type is required")
    for name in ("sigma", "omega", "c"):
        if len(getattr(p, name)) != n:
            raise LengthMismatch(f"{name} has length {len(getattr(p, name))}, expected {n}")
    if np.any(p.d <= 0):
        raise NonPositiveDrift(f"drifts must be > 0, got {p.d.tolist()}")
    if np.any(p.sigma <= 0):
        raise NonPositiveDiffusion(f"diffusions must be > 0, got {p.sigma.tolist()}")
    if np.any(p.omega <= 0):
        raise NonPositiveWeight(f"waiting weights must be > 0, got {p.omega.tolist()}")
    if np.any(p.c < 0):
        raise NegativeCost(f"unit transport costs must be >= 0, got {p.c.tolist()}")
    if not p.a_d > 0:
        raise NonPositiveFixedCost(f"fixed clearing cost must be > 0, got {p.a_d}")


def validate(params: SystemParams) -> SystemParams:
    """Re-run the model checks; returns ``params`` unchanged when valid."""
    _check(params)
    return params


def params_from_mapping(doc: dict) -> SystemParams:
    missing = [k for k in ("d", "sigma", "omega", "a_d") if k not in doc]
    if missing:
        raise ParseError(f"missing keys: {', '.join(missing)}")
    return SystemParams(
        d=doc["d"], sigma=doc["sigma"], omega=doc["omega"], a_d=doc["a_d"], c=doc.get("c")
    )


def params_from_json(text: str) -> SystemParams:
    """Parse ``{"d", "sigma", "c", "omega", "a_d"}``; ``c`` defaults to zeros."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("parameter document must be a JSON object")
    try:
        return params_from_mapping(doc)
    except TypeError as exc:
        raise ParseError(f"malformed parameter values: {exc}") from exc


def load_params(path: Union[str, Path]) -> SystemParams:
    return params_from_json(Path(path).read_text())


# -- policies --------------------------------------------------------------


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise NonPositiveParameter(f"{name} must be a positive finite number, got {value}")
    return value


@dataclass(frozen=True)
class QP:
    """Clear when the total load first reaches ``q``."""

    q: float

    def __post_init__(self):
        object.__setattr__(self, "q", _positive("Q", self.q))


@dataclass(frozen=True)
class TP:
    """Clear every ``t`` time units."""

    t: float

    def __post_init__(self):
        object.__setattr__(self, "t", _positive("T", self.t))


@dataclass(frozen=True)
class QTP:
    """Clear ``t`` time units after the total load first reaches ``q``."""

    q: float
    t: float

    def __post_init__(self):
        q, t = float(self.q), float(self.t)
        if q == 0 and t == 0:
            raise ZeroCycle("(T_Q + T) policy needs Q > 0")
        object.__setattr__(self, "q", _positive("Q", q))
        if not t >= 0 or not np.isfinite(t):
            raise NonPositiveParameter(f"T must be >= 0, got {t}")
        object.__setattr__(self, "t", t)


@dataclass(frozen=True)
class IRP:
    """Clear when the weighted load sum_i omega_i N_i(t) first reaches ``m``."""

    m: float

    def __post_init__(self):
        object.__setattr__(self, "m", _positive("M", self.m))


@dataclass(frozen=True)
class IRHP:
    """IRP with a hard cap: clear at min(tau_M, t)."""

    m: float
    t: float

    def __post_init__(self):
        object.__setattr__(self, "m", _positive("M", self.m))
        object.__setattr__(self, "t", _positive("T", self.t))


@dataclass(frozen=True)
class Custom:
    """User stopping rule ``rule(elapsed, n_vector) -> bool`` checked on the grid.

    With ``vectorized=True`` the rule receives a time array of shape (k,) and
    loads of shape (k, n) and must return a boolean array of shape (k,); rows
    may come from different cycles, so the rule must act row by row.
    The rule must only look at the current cycle, so cycles stay i.i.d.
    Simulation past ``time_cap`` raises :class:`CycleCapExceeded`.
    """

    rule: Callable
    time_cap: float = 1e6
    vectorized: bool = False
    label: str = "custom"

    def __post_init__(self):
        if not callable(self.rule):
            raise TypeError("rule must be callable")
        object.__setattr__(self, "time_cap", _positive("time_cap", self.time_cap))


Policy = Union[QP, TP, QTP, IRP, IRHP, Custom]


def policy_name(policy: Policy) -> str:
    if isinstance(policy, Custom):
        return policy.label
    return type(policy).__name__


def policy_args(policy: Policy) -> dict:
    if isinstance(policy, QP):
        return {"Q": policy.q}
    if isinstance(policy, TP):
        return {"T": policy.t}
    if isinstance(policy, QTP):
        return {"Q": policy.q, "T": policy.t}
    if isinstance(policy, IRP):
        return {"M": policy.m}
    if isinstance(policy, IRHP):
        return {"M": policy.m, "T": policy.t}
    return {"time_cap": policy.time_cap}


# -- discriminant ----------------------------------------------------------


class Sign(enum.IntEnum):
    NEGATIVE = -1
    ZERO = 0
    POSITIVE = 1


@dataclass(frozen=True)
class Discriminant:
    value: float
    sign: Sign


def discriminant(params: SystemParams) -> Discriminant:
    """sum_i omega_i (2 D sigma_i^2 - D_i sigma^2): positive favours the optimal QP."""
    big_d, s2 = params.total_drift, params.total_var
    a = 2.0 * big_d * params.sigma**2
    b = params.d * s2
    value = float(np.sum(params.omega * (a - b)))
    scale = max(1.0, float(np.sum(params.omega * (a + b))))
    if abs(value) <= DISCRIMINANT_RTOL * scale:
        sign = Sign.ZERO
    else:
        sign = Sign.POSITIVE if value > 0 else Sign.NEGATIVE
    return Discriminant(value, sign)
