import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ResidualProfile(BaseModel):
    """
    Represents the oracle residual of a channel as a function of the number of
    recovered taps.

    :ivar sorted_powers_m: Tap powers |h_M[n]|^2 in descending order.
    :type sorted_powers_m: np.ndarray
    :ivar rho_bar: Oracle residual rho_bar(d) for d = 0..M.
    :type rho_bar: np.ndarray
    :ivar ci_Rd: Compressibility Index of the powers left after removing the d largest, d = 0..M-1.
    :type ci_Rd: np.ndarray
    :ivar K: Normalization constant of the residual.
    :type K: int
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sorted_powers_m: np.ndarray = Field(..., description="Descending tap powers")
    rho_bar: np.ndarray = Field(..., description="Oracle residual for d = 0..M")
    ci_Rd: np.ndarray = Field(..., description="CI of the remaining powers for d = 0..M-1")
    K: int = Field(..., gt=0, description="Normalization constant")

    @model_validator(mode="after")
    def check_profile(self) -> "ResidualProfile":
        M = len(self.sorted_powers_m)
        if len(self.rho_bar) != M + 1 or len(self.ci_Rd) != M:
            raise ValueError("rho_bar needs M+1 entries and ci_Rd M entries")
        if np.any(np.diff(self.sorted_powers_m) > 0):
            raise ValueError("Tap powers must be sorted in descending order")
        if np.any(np.diff(self.rho_bar) > 1e-12 * self.rho_bar[0]):
            raise ValueError("Oracle residual must be non-increasing")
        return self

    @property
    def M(self) -> int:
        return len(self.sorted_powers_m)

    @property
    def total_power(self) -> float:
        return float(self.rho_bar[0] * self.K)

    def normalized(self) -> np.ndarray:
        """K rho_bar(d) / ||h_M||^2, the quantity the lower bounds apply to."""
        return self.rho_bar / self.rho_bar[0]


class CiStats(BaseModel):
    """
    Represents the Compressibility Index of a vector.

    :ivar ci: (sum |v|^2)^2 / (M sum |v|^4), in [1/M, 1].
    :type ci: float
    :ivar adjusted_ci: (M/L) ci, or ci when no L is given.
    :type adjusted_ci: float
    :ivar kurtosis_estimate: 1/ci, the normalized fourth moment for i.i.d. entries.
    :type kurtosis_estimate: float
    :ivar M: Length of the vector.
    :type M: int
    """
    ci: float = Field(..., gt=0, description="Compressibility Index")
    adjusted_ci: float = Field(..., gt=0, description="CI scaled by M/L")
    kurtosis_estimate: float = Field(..., gt=0, description="Inverse of the CI")
    M: int = Field(..., gt=0, description="Vector length")

    @model_validator(mode="after")
    def check_range(self) -> "CiStats":
        if not 1.0 / self.M - 1e-12 <= self.ci <= 1.0 + 1e-12:
            raise ValueError(f"CI {self.ci} outside [1/M, 1]")
        return self


class BoundValue(BaseModel):
    value: float = Field(..., ge=0, description="Bound value")
    degenerate: bool = Field(False, description="A factor was clamped or the CI product is below one")


class CiGrowth(BaseModel):
    """
    Represents the CI growth ratios r_d of a channel.

    ``degenerate[d-1]`` flags the steps where the remaining set is empty and
    ``ratios[d-1]`` is NaN.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ratios: np.ndarray = Field(..., description="r_d for d = 1..d_max")
    degenerate: np.ndarray = Field(..., description="Steps with an empty remaining set")

    def fraction_le(self, threshold: float = 1.0) -> float:
        valid = ~self.degenerate
        if not valid.any():
            return float("nan")
        return float(np.mean(self.ratios[valid] <= threshold))


class KurtosisBridge(BaseModel):
    """
    Represents the link between the amplitude CI and the amplitude kurtosis over
    an ensemble of channel draws.

    :ivar draws: Number of channel draws.
    :ivar ci_alpha_mean: Mean CI of the unnormalized amplitudes.
    :ivar inverse_ci_mean: Mean of 1/CI, comparable to the kurtosis.
    :ivar kappa_estimate: Sample kurtosis of the pooled unnormalized amplitudes.
    :ivar lognormal_kappa_estimate: exp(4 Var(log a)) on the pooled amplitudes.
    """
    draws: int = Field(..., gt=0)
    ci_alpha_mean: float = Field(..., gt=0)
    inverse_ci_mean: float = Field(..., gt=0)
    kappa_estimate: float = Field(..., gt=0)
    lognormal_kappa_estimate: float = Field(..., gt=0)
