"""Variant space: ``u`` one degree higher than ``q`` and the traces.

The stabilisation acts on the face projection of ``u`` with weight
``tau / h_K``.  Assembly, condensation and time stepping are the shared
ones from :mod:`hdgkg.hdg` and :mod:`hdgkg.timestepping`; this module only
packages the configuration and a run helper.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cases import ManufacturedCase
from .hdg import Discretization, LocalMatrices, SpaceConfig, assemble_local
from .mesh import Mesh
from .timestepping import Integrator, RunResult, TimeConfig

__all__ = ["VariantConfig", "variant_discretization", "assemble_variant_local", "run_variant"]


@dataclass(frozen=True)
class VariantConfig:
    k: int
    tau: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"degree must be non-negative, got {self.k}")
        if not self.tau > 0:
            raise ValueError(f"stabilisation tau must be positive, got {self.tau}")

    @property
    def space(self) -> SpaceConfig:
        return SpaceConfig(self.k, variant=True, tau=self.tau)


def variant_discretization(mesh: Mesh, cfg: VariantConfig) -> Discretization:
    return Discretization(mesh, cfg.space)


def assemble_variant_local(mesh: Mesh, cfg: VariantConfig) -> LocalMatrices:
    return assemble_local(variant_discretization(mesh, cfg))


def run_variant(case: ManufacturedCase, mesh: Mesh, time_cfg: TimeConfig, cfg: VariantConfig, **run_kw) -> RunResult:
    if time_cfg.scheme != "conservative":
        raise ValueError("the variant is paired with the conservative time stepper")
    disc = variant_discretization(mesh, cfg)
    return Integrator(disc, case, time_cfg).run(**run_kw)
