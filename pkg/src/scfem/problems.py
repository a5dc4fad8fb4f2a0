r"""Benchmark problem definitions.

Three built-in parametric diffusion problems on ``y in [-1, 1]^M``:

* ``testI`` -- affine cosine-expansion coefficient on the unit square with a
  slowly decaying amplitude sequence, unit load;
* ``testII`` -- lognormal-style coefficient ``exp(h)`` on the L-shape, where
  ``h`` is a truncated Karhunen--Loeve expansion of a separable exponential
  covariance on the enclosing square, unit load;
* ``testIII`` -- Poisson problem on the scaled square whose load moves and
  sharpens a Gaussian peak with the parameter; the exact solution is known
  and a quantity of interest (scaled expected squared L2 norm) has a closed
  reference value.

A problem is described by a :class:`ProblemSpec` carrying vectorized
callables ``coefficient(x, y)`` and ``rhs(x, y)`` with ``x`` of shape
``(n, 2)``.  ``custom_problem`` builds a spec from expression strings over
``x1, x2, y1, ..., yM`` (grammar: arithmetic, parentheses, the functions
sin/cos/tan/exp/log/sqrt/abs/tanh, constants pi and e).
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ContractViolationError

__all__ = [
    "ProblemSpec", "fourier_order", "fourier_amplitude", "test_case_1",
    "kl_eigenpairs_1d", "kl_eigenpairs_2d", "test_case_2", "test_case_3",
    "test3_exact", "test3_exact_grad", "test3_rhs", "test3_reference_qoi",
    "custom_problem", "get_problem",
]


@dataclass(frozen=True)
class ProblemSpec:
    """A parametric elliptic problem with homogeneous Dirichlet data.

    ``kind`` is ``"coefficient"`` when the diffusion coefficient depends on
    the parameter (fixed load) and ``"rhs"`` when the load depends on the
    parameter (unit coefficient).
    """

    name: str
    domain: str
    dim: int
    kind: str
    coefficient: Callable | None
    rhs: Callable
    default_resolution: int
    coefficient_bounds: tuple | None = None
    exact: Callable | None = None
    exact_grad: Callable | None = None
    qoi_scale: float | None = None
    reference_qoi: float | None = None

    def coefficient_at(self, y: Sequence[float]) -> Callable | None:
        """Coefficient frozen at one parameter value; ``None`` for unit."""
        if self.kind == "rhs" or self.coefficient is None:
            return None
        yv = tuple(float(v) for v in y)
        return lambda x: self.coefficient(x, yv)

    def rhs_at(self, y: Sequence[float]) -> Callable:
        yv = tuple(float(v) for v in y)
        return lambda x: self.rhs(x, yv)


# ----------------------------------------------------------------- test I

def fourier_order(m: int) -> tuple[int, int]:
    """Frequency pair of the m-th planar cosine mode (diagonal sweep)."""
    if m < 1:
        raise ContractViolationError("mode number must be >= 1")
    k = int(math.floor(-0.5 + math.sqrt(0.25 + 2.0 * m)))
    b1 = m - k * (k + 1) // 2
    b2 = k - b1
    return b1, b2


def fourier_amplitude(m: int, scale: float = 0.547) -> float:
    """Amplitude of the m-th mode, quadratically decaying."""
    if m < 1:
        raise ContractViolationError("mode number must be >= 1")
    return scale * m ** -2.0


def test_case_1(dim: int = 4, scale: float = 0.547) -> ProblemSpec:
    """Affine cosine coefficient on the unit square, unit load."""
    orders = [fourier_order(m) for m in range(1, dim + 1)]
    amps = np.array([fourier_amplitude(m, scale) for m in range(1, dim + 1)])
    total = float(np.sum(amps))
    if total >= 1.0:
        raise ContractViolationError(
            "amplitude sequence must sum below one for coercivity")

    def coefficient(x, y):
        x = np.asarray(x, dtype=float)
        out = np.ones(len(x))
        for (b1, b2), amp, ym in zip(orders, amps, y):
            out += amp * float(ym) * (np.cos(2 * np.pi * b1 * x[:, 0])
                                      * np.cos(2 * np.pi * b2 * x[:, 1]))
        return out

    def rhs(x, y):
        return np.ones(len(np.asarray(x)))

    return ProblemSpec(
        name="testI", domain="unit-square", dim=dim, kind="coefficient",
        coefficient=coefficient, rhs=rhs, default_resolution=8,
        coefficient_bounds=(1.0 - total, 1.0 + total),
    )


# ---------------------------------------------------------------- test II

@dataclass(frozen=True)
class KLMode1D:
    omega: float
    lam: float
    parity: str  # "even" (cosine) or "odd" (sine)
    func: Callable = field(compare=False)


@dataclass(frozen=True)
class KLMode2D:
    lam: float
    i: int
    j: int
    func: Callable = field(compare=False)


def kl_eigenpairs_1d(n: int) -> list[KLMode1D]:
    r"""Leading eigenpairs of the kernel ``exp(-|s-t|)`` on ``[-1, 1]``.

    Cosine branch: :math:`1 - \omega\tan\omega = 0` on
    :math:`(k\pi, k\pi + \pi/2)`; sine branch:
    :math:`\omega + \tan\omega = 0` on :math:`((k-1/2)\pi, k\pi)`.  Both give
    :math:`\lambda = 2/(1+\omega^2)`; eigenfunctions are normalized in L2
    and signed to be positive at the left endpoint.  Returned sorted by
    decreasing eigenvalue.
    """
    if n < 1:
        raise ContractViolationError("need at least one mode")
    modes: list[KLMode1D] = []
    for k in range(n):
        w = brentq(lambda t: t * np.sin(t) - np.cos(t),
                   k * np.pi + 1e-12, k * np.pi + np.pi / 2, xtol=1e-14)
        lam = 2.0 / (1.0 + w * w)
        norm = math.sqrt(1.0 + math.sin(2.0 * w) / (2.0 * w))
        sign = 1.0 if math.cos(-w) > 0 else -1.0

        def func(s, w=w, norm=norm, sign=sign):
            return sign * np.cos(w * np.asarray(s)) / norm

        modes.append(KLMode1D(omega=float(w), lam=float(lam), parity="even",
                              func=func))
    for k in range(1, n + 1):
        w = brentq(lambda t: np.sin(t) + t * np.cos(t),
                   (k - 0.5) * np.pi + 1e-12, k * np.pi - 1e-12, xtol=1e-14)
        lam = 2.0 / (1.0 + w * w)
        norm = math.sqrt(1.0 - math.sin(2.0 * w) / (2.0 * w))
        sign = 1.0 if math.sin(-w) > 0 else -1.0

        def func(s, w=w, norm=norm, sign=sign):
            return sign * np.sin(w * np.asarray(s)) / norm

        modes.append(KLMode1D(omega=float(w), lam=float(lam), parity="odd",
                              func=func))
    modes.sort(key=lambda m: m.omega)
    return modes[:n]


def kl_eigenpairs_2d(n: int, sigma: float = 1.5) -> list[KLMode2D]:
    """Leading eigenpairs of ``sigma^2 exp(-|x1-x1'| - |x2-x2'|)`` on the square.

    Products of one-dimensional eigenpairs; sorted by decreasing eigenvalue
    with lexicographic ``(i, j)`` tie-breaking.
    """
    base = kl_eigenpairs_1d(n)
    pairs = []
    for i, mi in enumerate(base, start=1):
        for j, mj in enumerate(base, start=1):
            lam = sigma * sigma * mi.lam * mj.lam

            def func(x, fi=mi.func, fj=mj.func):
                x = np.asarray(x, dtype=float)
                return fi(x[:, 0]) * fj(x[:, 1])

            pairs.append(KLMode2D(lam=float(lam), i=i, j=j, func=func))
    pairs.sort(key=lambda m: (-m.lam, m.i, m.j))
    return pairs[:n]


def test_case_2(dim: int = 4, sigma: float = 1.5) -> ProblemSpec:
    """Exponential of a truncated KL field on the L-shape, unit load.

    The covariance lives on the enclosing square ``(-1, 1)^2``.
    """
    modes = kl_eigenpairs_2d(dim, sigma)
    roots = [math.sqrt(m.lam) for m in modes]

    def coefficient(x, y):
        x = np.asarray(x, dtype=float)
        h = np.ones(len(x))
        for r, mode, ym in zip(roots, modes, y):
            h += r * float(ym) * mode.func(x)
        return np.exp(h)

    def rhs(x, y):
        return np.ones(len(np.asarray(x)))

    return ProblemSpec(
        name="testII", domain="l-shape", dim=dim, kind="coefficient",
        coefficient=coefficient, rhs=rhs, default_resolution=4,
    )


# --------------------------------------------------------------- test III

_BETA = 50.0 / 16.0


def _alpha(y1: float) -> float:
    return (9.0 * y1 + 11.0) / 2.0


def test3_exact(x, y) -> np.ndarray:
    """Moving-peak solution on the scaled square."""
    x = np.asarray(x, dtype=float)
    a = _alpha(y[0])
    s = x[:, 0] - y[0]
    t = x[:, 1] - y[1]
    return np.exp(-_BETA * (a * s * s + t * t))


def test3_exact_grad(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a = _alpha(y[0])
    s = x[:, 0] - y[0]
    t = x[:, 1] - y[1]
    u = np.exp(-_BETA * (a * s * s + t * t))
    return np.stack([-2.0 * _BETA * a * s * u, -2.0 * _BETA * t * u], axis=1)


def test3_rhs(x, y) -> np.ndarray:
    """Load with ``-lap`` of the exact solution."""
    x = np.asarray(x, dtype=float)
    a = _alpha(y[0])
    s = x[:, 0] - y[0]
    t = x[:, 1] - y[1]
    u = np.exp(-_BETA * (a * s * s + t * t))
    d = -4.0 * _BETA ** 2 * (a * a * s * s + t * t) + 2.0 * _BETA * (a + 1.0)
    return d * u


def test3_reference_qoi() -> float:
    """Closed-form value of the quantity of interest."""
    return (math.sqrt(10.0) - 1.0) * math.pi / (9.0 * 50.0)


def test_case_3() -> ProblemSpec:
    """Parametric-load Poisson problem with a moving, stretching peak."""
    return ProblemSpec(
        name="testIII", domain="scaled-square", dim=2, kind="rhs",
        coefficient=None, rhs=test3_rhs, default_resolution=8,
        exact=test3_exact, exact_grad=test3_exact_grad,
        qoi_scale=1.0 / 16.0, reference_qoi=test3_reference_qoi(),
    )


# ----------------------------------------------------------------- custom

_ALLOWED_CALLS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
}
_ALLOWED_NAMES = {"pi": np.pi, "e": np.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
    ast.UAdd, ast.Mod,
)


def _compile_expression(expr: str, dim: int) -> Callable:
    """Compile an expression over x1, x2, y1..yM into a vectorized callable."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as err:
        raise ConfigError(f"cannot parse expression {expr!r}: {err}") from None
    names = {"x1", "x2"} | {f"y{m}" for m in range(1, dim + 1)}
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(
                f"expression {expr!r} uses unsupported syntax "
                f"({type(node).__name__})")
        if isinstance(node, ast.Call):
            if (not isinstance(node.func, ast.Name)
                    or node.func.id not in _ALLOWED_CALLS or node.keywords):
                raise ConfigError(f"unsupported function call in {expr!r}")
        elif isinstance(node, ast.Name):
            if node.id not in names and node.id not in _ALLOWED_NAMES \
                    and node.id not in _ALLOWED_CALLS:
                raise ConfigError(f"unknown name {node.id!r} in {expr!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ConfigError(f"non-numeric constant in {expr!r}")
    code = compile(tree, "<expression>", "eval")

    def evaluate(x, y):
        x = np.asarray(x, dtype=float)
        scope = {"x1": x[:, 0], "x2": x[:, 1], **_ALLOWED_NAMES, **_ALLOWED_CALLS}
        for m in range(1, dim + 1):
            scope[f"y{m}"] = float(y[m - 1])
        out = eval(code, {"__builtins__": {}}, scope)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(x),)).copy()

    return evaluate


def custom_problem(dim: int, domain: str = "unit-square",
                   kind: str = "coefficient",
                   coefficient_expr: str | None = None,
                   rhs_expr: str = "1",
                   resolution: int = 8) -> ProblemSpec:
    """Problem from expression strings; see the module docstring for grammar."""
    if kind not in ("coefficient", "rhs"):
        raise ConfigError(f"kind must be 'coefficient' or 'rhs', got {kind!r}")
    if dim < 1:
        raise ConfigError("parametric dimension must be >= 1")
    coeff = None
    if kind == "coefficient":
        if coefficient_expr is None:
            raise ConfigError("coefficient expression required for this kind")
        coeff = _compile_expression(coefficient_expr, dim)
    rhs = _compile_expression(rhs_expr, dim)
    return ProblemSpec(
        name="custom", domain=domain, dim=dim, kind=kind,
        coefficient=coeff, rhs=rhs, default_resolution=resolution,
    )


def get_problem(name: str, **kwargs) -> ProblemSpec:
    """Look up a problem by CLI name."""
    if name == "testI":
        return test_case_1(**kwargs)
    if name == "testII":
        return test_case_2(**kwargs)
    if name == "testIII":
        if kwargs:
            raise ConfigError("testIII takes no parameters")
        return test_case_3()
    if name == "custom":
        return custom_problem(**kwargs)
    raise ConfigError(f"unknown problem {name!r}")
