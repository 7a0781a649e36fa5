"""Error norms, convergence studies, energy histories and table output."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .basis import MAX_DEGREE, triangle_quadrature
from .cases import ManufacturedCase, builtin_case, validate_case
from .hdg import Discretization, HDGState, SpaceConfig
from .mesh import build_structured
from .nonlinear import NewtonConfig
from .postprocess import PostprocessedField, postprocess
from .timestepping import Integrator, RunResult, TimeConfig

__all__ = [
    "SCHEME_CHOICES",
    "THREADS_ENV",
    "ConvergenceRow",
    "EnergyRow",
    "SingleResult",
    "error_norms",
    "eoc",
    "default_time_step",
    "run_single",
    "run_convergence",
    "run_energy",
    "write_table",
    "format_table",
    "CONVERGENCE_COLUMNS",
    "ENERGY_COLUMNS",
]

SCHEME_CHOICES = ("conservative", "nonconservative", "variant")
THREADS_ENV = "HDGKG_THREADS"
CONVERGENCE_COLUMNS = ("k", "m", "err_u", "eoc_u", "err_q", "eoc_q", "err_ustar", "eoc_ustar")
ENERGY_COLUMNS = ("m", "n", "drift")


@lru_cache(maxsize=None)
def _validated_case(example: int) -> ManufacturedCase:
    case = builtin_case(example)
    validate_case(case)
    return case


def error_norms(
    disc: Discretization,
    state: HDGState,
    case: ManufacturedCase,
    t: float,
    ustar: PostprocessedField | None = None,
    degree: int | None = None,
):
    """Broken L2 errors ``(||u - u_h||, ||q - q_h||, ||u - u*||)``; the last is NaN without ``ustar``."""
    if not case.has_exact:
        raise ValueError(f"{case.name} has no exact solution")
    top = max(disc.cfg.u_degree, ustar.degree if ustar is not None else 0)
    quad = triangle_quadrature(degree if degree is not None else 2 * (top + 2) + 2)
    pts = quad.points
    wdet = quad.weights[None, :] * np.abs(disc.det)[:, None]
    xq = disc.origin[:, None, :] + np.einsum("ecd,qd->eqc", disc.jac, pts)
    x, y = xq[..., 0], xq[..., 1]
    u_ex = case.u(x, y, t) * np.ones_like(x)
    gx, gy = case.grad(x, y, t)
    uh = state.u @ disc.basis_u.values(pts).T
    qh = np.einsum("qi,eci->eqc", disc.basis_q.values(pts), state.q)
    err_u = math.sqrt(float(np.sum(wdet * (u_ex - uh) ** 2)))
    err_q = math.sqrt(float(np.sum(wdet * ((gx - qh[..., 0]) ** 2 + (gy - qh[..., 1]) ** 2))))
    err_s = math.nan
    if ustar is not None:
        err_s = math.sqrt(float(np.sum(wdet * (u_ex - ustar.values(pts)) ** 2)))
    return err_u, err_q, err_s


def eoc(errors) -> list[float | None]:
    """``log2(e_{m-1} / e_m)`` for consecutive refinement levels; the first entry is ``None``."""
    out: list[float | None] = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        if a is None or b is None or not (a > 0 and b > 0) or math.isnan(a) or math.isnan(b):
            out.append(None)
        else:
            out.append(math.log2(a / b))
    return out


def default_time_step(h: float, k: int, scheme: str) -> float:
    """``h^((k+1)/2)`` for the standard schemes and ``h^((k+2)/2)`` for the variant.

    Both keep the second-order time error at the size of the spatial error
    of ``u`` (degree ``k+1`` convergence, or ``k+2`` for the variant).
    """
    p = (k + 2) / 2.0 if scheme == "variant" else (k + 1) / 2.0
    return h**p


def _space(k: int, scheme: str, tau: float) -> SpaceConfig:
    if scheme not in SCHEME_CHOICES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEME_CHOICES}")
    if scheme != "variant" and k < 1:
        raise ValueError(f"the {scheme} scheme needs k >= 1 (got k={k}); k = 0 is available with the variant")
    if k + 1 > MAX_DEGREE:
        # both u* and the variant's u live one degree above k
        raise ValueError(f"k must be at most {MAX_DEGREE - 1}, got {k}")
    return SpaceConfig(k, variant=scheme == "variant", tau=tau)


def _time_config(h, k, scheme, dt, T, newton_tol) -> TimeConfig:
    step = default_time_step(h, k, scheme) if dt is None else dt
    step = min(step, T)
    n = math.ceil(T / step - 1e-9)
    time_scheme = "nonconservative" if scheme == "nonconservative" else "conservative"
    return TimeConfig(T / n, T, time_scheme, NewtonConfig(tol=newton_tol))


@dataclass
class SingleResult:
    example: int
    k: int
    m: int
    scheme: str
    dt: float
    n_steps: int
    err_u: float
    err_q: float
    err_ustar: float
    newton_iterations: int
    seconds: float
    run: RunResult | None = None

    def summary(self) -> str:
        return (
            f"example={self.example} scheme={self.scheme} k={self.k} m={self.m} dt={self.dt:.6g} "
            f"steps={self.n_steps} err_u={self.err_u:.4e} err_q={self.err_q:.4e} "
            f"err_ustar={self.err_ustar:.4e} newton_iterations={self.newton_iterations} "
            f"seconds={self.seconds:.2f}"
        )


def run_single(
    example: int,
    k: int,
    m: int,
    scheme: str = "conservative",
    tau: float = 1.0,
    dt: float | None = None,
    T: float = 1.0,
    newton_tol: float = 1e-12,
    record_path=None,
    keep_run: bool = False,
) -> SingleResult:
    """Run one mesh to ``T`` and measure the final-time errors."""
    case = _validated_case(example)
    space = _space(k, scheme, tau)
    mesh = build_structured(m)
    disc = Discretization(mesh, space)
    tcfg = _time_config(mesh.mesh_parameter, k, scheme, dt, T, newton_tol)
    start = time.perf_counter()
    result = Integrator(disc, case, tcfg).run(record_path=record_path)
    seconds = time.perf_counter() - start
    t_final = tcfg.n_steps * tcfg.dt
    ustar = postprocess(disc, result.state) if (not space.variant and case.has_exact) else None
    if case.has_exact:
        errs = error_norms(disc, result.state, case, t_final, ustar)
    else:
        errs = (math.nan, math.nan, math.nan)
    return SingleResult(
        example,
        k,
        m,
        scheme,
        tcfg.dt,
        tcfg.n_steps,
        *errs,
        newton_iterations=sum(r.newton_iterations for r in result.records),
        seconds=seconds,
        run=result if keep_run else None,
    )


@dataclass
class ConvergenceRow:
    k: int
    m: int
    err_u: float
    eoc_u: float | None
    err_q: float
    eoc_q: float | None
    err_ustar: float
    eoc_ustar: float | None


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    if threads < 1:
        raise ValueError(f"thread count must be at least 1, got {threads}")
    return threads


def _single_task(args):
    return run_single(*args)


def run_convergence(
    example: int,
    ks,
    ms,
    scheme: str = "conservative",
    tau: float = 1.0,
    dt: float | None = None,
    T: float = 1.0,
    newton_tol: float = 1e-12,
    threads: int | None = None,
) -> list[ConvergenceRow]:
    """Run every ``(k, m)`` pair and compute EOCs along ``m`` for each ``k``."""
    ks, ms = list(ks), list(ms)
    if not ks or not ms:
        raise ValueError("empty k or m range")
    case = _validated_case(example)
    if not case.has_exact:
        raise ValueError(f"example {example} has no exact solution; use the energy study")
    for k in ks:
        _space(k, scheme, tau)
    tasks = [(example, k, m, scheme, tau, dt, T, newton_tol) for k in ks for m in ms]
    workers = resolve_threads(threads)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_single_task, tasks))
    else:
        results = [_single_task(t) for t in tasks]
    rows = []
    for i, k in enumerate(ks):
        chunk = results[i * len(ms):(i + 1) * len(ms)]
        eu = eoc([r.err_u for r in chunk])
        eq = eoc([r.err_q for r in chunk])
        es = eoc([r.err_ustar for r in chunk])
        for r, a, b, c in zip(chunk, eu, eq, es):
            rows.append(ConvergenceRow(k, r.m, r.err_u, a, r.err_q, b, r.err_ustar, c))
    return rows


@dataclass
class EnergyRow:
    m: int
    n: int
    drift: float


@dataclass
class EnergyStudy:
    rows: list[EnergyRow]
    reference: dict  # m -> E^{3/2}
    initial: dict  # m -> semidiscrete energy at t = 0


def run_energy(
    example: int = 4,
    k: int = 1,
    ms=(1, 2, 3, 4),
    dt: float = 0.1,
    T: float = 1.0,
    tau: float = 1.0,
    newton_tol: float = 1e-12,
    scheme: str = "conservative",
) -> EnergyStudy:
    """Energy drift history for ``n = 1 .. T/dt``.

    Row ``n = 1`` is ``|E^{3/2} - E_0|`` with ``E_0`` the semidiscrete energy
    of the initial data; rows ``n >= 2`` are ``|E^{n+1/2} - E^{3/2}|``.  The
    last row needs level ``N + 1``, so the run takes one step past ``T``.
    """
    if scheme == "nonconservative":
        raise ValueError("the energy study applies to the conservative schemes")
    case = _validated_case(example)
    space = _space(k, scheme, tau)
    rows, reference, initial = [], {}, {}
    for m in ms:
        disc = Discretization(build_structured(m), space)
        tcfg = TimeConfig(dt, T, "conservative", NewtonConfig(tol=newton_tol))
        N = tcfg.n_steps
        result = Integrator(disc, case, tcfg).run(n_steps=N + 1)
        E = result.energies  # E[j] = E^{j+1/2}
        reference[m], initial[m] = float(E[1]), result.initial_energy
        rows.append(EnergyRow(m, 1, abs(E[1] - result.initial_energy)))
        rows.extend(EnergyRow(m, n, abs(E[n] - E[1])) for n in range(2, N + 1))
    return EnergyStudy(rows, reference, initial)


def _cell(value, column: str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if column in ("k", "m", "n"):
        return str(int(value))
    if column.startswith("eoc"):
        return f"{value:.4f}"
    return f"{value:.4e}"


def format_table(rows, columns, markdown: bool = False) -> str:
    cells = [[_cell(asdict(r)[c], c) for c in columns] for r in rows]
    if not markdown:
        lines = [",".join(columns)] + [",".join(r) for r in cells]
        return "\n".join(lines) + "\n"
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c) for i, c in enumerate(columns)]
    head = "| " + " | ".join(c.rjust(w) for c, w in zip(columns, widths)) + " |"
    rule = "|" + "|".join("-" * (w + 1) + ":" for w in widths) + "|"
    body = ["| " + " | ".join(v.rjust(w) for v, w in zip(r, widths)) + " |" for r in cells]
    return "\n".join([head, rule, *body]) + "\n"


def write_table(rows, columns, path) -> None:
    """CSV, or aligned markdown when the file name ends in ``.md``."""
    path = Path(path)
    text = format_table(rows, columns, markdown=path.suffix.lower() == ".md")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
