"""Prior hyperparameters for the discrete and continuous samplers."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = ["PriorConfig", "pcp_rate", "VARIANTS"]

VARIANTS = ("standard", "parametric", "semi_pcp", "semi_r2d2")


def pcp_rate(U: float = 0.5) -> float:
    """Exponential rate putting roughly 1% mass above a marginal SD of ``U``."""
    return -np.log(0.01) * 0.31 / U


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters; defaults follow the simulation-study choices.

    Gamma/InvGamma use shape and rate.  ``coef_var`` is the variance of the
    Normal(0, .) prior on intercepts, slopes, psi, covariate coefficients and
    the mean level of the spline coefficients.
    """

    variant: str = "standard"
    coef_var: float = 100.0
    tau2_shape: float = 0.1
    tau2_rate: float = 0.1
    # parametric CAR
    sigma2_shape: float = 1.0
    sigma2_rate: float = 1.0
    sigma_x2_shape: float = 1.0
    sigma_x2_rate: float = 1.0
    tau_shape: float = 1.0
    tau_rate: float = 1.0
    # lambda_x ~ Uniform(0, lambda_z) when True, else Uniform(0, 1)
    lambda_x_below_z: bool = True
    # semi-parametric coefficient variance
    pcp_U: float = 0.5
    pcp_xi: float | None = None
    # NegBin overdispersion: log r ~ Normal(0, logr_var)
    logr_var: float = 10.0
    # Normalize the spatial variance by c(lambda) = n / sum f_z(omega_k)
    normalize_spatial: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and f.name != "pcp_xi" and not v > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.pcp_xi is not None and not self.pcp_xi > 0:
            raise ValueError("pcp_xi must be positive")

    @property
    def xi(self) -> float:
        return pcp_rate(self.pcp_U) if self.pcp_xi is None else self.pcp_xi

    @property
    def is_semi(self) -> bool:
        return self.variant.startswith("semi")
