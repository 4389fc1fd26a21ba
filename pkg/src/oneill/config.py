"""Central tolerances. Scenario files may override any field."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    structural: float = 1e-8  # submersion property, A = 0 verdicts, Killing residual
    identity: float = 1e-7  # curvature identities, naturality
    orthonormality: float = 1e-10  # adapted frames
    gram_schmidt: float = 1e-8  # dependent-vector threshold
    equivalence: float = 1e-8  # class-specific sufficiency checks
    reconstruct_A: float = 1e-6  # refuse warp reconstruction above this |A|
    quadrature: float = 1e-8
    compare: float = 1e-6  # relative distance for signature comparison
    rank_rel: float = 1e-6  # singular-value threshold relative to the largest
    rank_abs: float = 1e-6  # absolute floor so constant signatures have rank 0
    fd_step: float = 1e-4  # central-difference step for the signature Jacobian

    def updated(self, overrides: dict | None) -> "Tolerances":
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise KeyError(f"unknown tolerance(s): {sorted(bad)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = Tolerances()
