import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal


EstimationMethod = Literal["perfect-csi", "ml-m", "genie-ls", "omp", "ompbr", "bpdn-direct", "bpdn-ls"]
RefineKind = Literal["none", "binary-search"]
CovKind = Literal["ml-m-closed-form", "genie-closed-form", "cs-empirical"]
XiMode = Literal["noise-floor", "absolute"]

CS_METHODS = ("omp", "ompbr", "bpdn-direct", "bpdn-ls")


class DictionaryConfig(BaseModel):
    """
    Represents the delay dictionary and the stopping rule of the CS estimators.

    :ivar N_T: Dictionary size, atoms at n D_s / N_T for n < N_T.
    :type N_T: int
    :ivar refine: "binary-search" enables refinement inside the selected bin.
    :type refine: RefineKind
    :ivar delta_mu: Relative resolution of the refinement, in (0, 1).
    :type delta_mu: float
    :ivar xi: Stopping threshold on the residual power.
    :type xi: float
    :ivar max_iters: Iteration cap.
    :type max_iters: int
    """
    model_config = ConfigDict(frozen=True)

    N_T: int = Field(..., gt=0, description="Dictionary size")
    refine: RefineKind = Field("none", description="Refinement of the selected delay")
    delta_mu: float = Field(1e-2, gt=0, lt=1, description="Refinement resolution")
    xi: float = Field(..., gt=0, description="Residual power stopping threshold")
    max_iters: int = Field(..., gt=0, description="Iteration cap")


class BpdnConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    inner_tol: float = Field(1e-8, gt=0, description="Relative objective change stopping the inner solver")
    max_inner: int = Field(10_000, gt=0, description="Inner iteration cap")
    threshold_frac: float = Field(0.05, gt=0, lt=1, description="Support threshold relative to max |b|")
    window_frac: float = Field(0.01, gt=0, lt=1, description="Accepted residual window below xi")
    max_outer: int = Field(80, gt=0, description="Penalty bisection steps")


class EstimatorConfig(BaseModel):
    """
    Represents one estimator entry of an experiment.

    :ivar label: Unique name used in result tables, e.g. "omp-4M".
    :ivar method: Estimation method.
    :ivar n_t_factor: Dictionary size as a multiple of M.
    :ivar delta_mu: Refinement resolution (ompbr only).
    :ivar xi_mode: "noise-floor" (xi = N sigma^2) or "absolute" (xi = xi_value).
    :ivar xi_value: Absolute threshold used with ``xi_mode="absolute"``.
    :ivar max_iters: Iteration cap, defaults to N/2.
    :ivar bpdn: Settings of the l1 solver.
    """
    label: str = Field(..., min_length=1, description="Name in result tables")
    method: EstimationMethod = Field(..., description="Estimation method")
    n_t_factor: int = Field(1, gt=0, description="N_T = factor * M")
    delta_mu: float = Field(1e-2, gt=0, lt=1, description="Refinement resolution")
    xi_mode: XiMode = Field("noise-floor", description="How xi is chosen")
    xi_value: float | None = Field(None, gt=0, description="Absolute xi")
    max_iters: int | None = Field(None, gt=0, description="Iteration cap, N/2 when unset")
    bpdn: BpdnConfig = Field(default_factory=BpdnConfig)

    @model_validator(mode="after")
    def check_xi(self) -> "EstimatorConfig":
        if self.xi_mode == "absolute" and self.xi_value is None:
            raise ValueError("xi_value is required when xi_mode is 'absolute'")
        return self

    def dictionary_config(self, M: int, N: int, sigma2: float) -> DictionaryConfig:
        xi = self.xi_value if self.xi_mode == "absolute" else N * sigma2
        return DictionaryConfig(
            N_T=self.n_t_factor * M,
            refine="binary-search" if self.method == "ompbr" else "none",
            delta_mu=self.delta_mu,
            xi=max(xi, np.finfo(float).tiny),
            max_iters=self.max_iters or N // 2,
        )


class ChannelEstimate(BaseModel):
    """
    Represents the output of a channel estimator.

    :ivar h_K_hat: Estimated channel on all K subcarriers.
    :type h_K_hat: np.ndarray
    :ivar method: Method that produced the estimate.
    :type method: EstimationMethod
    :ivar support_tau_hat: Recovered delays in seconds (empty for ml-m).
    :type support_tau_hat: np.ndarray
    :ivar b_hat: LS coefficients aligned with the support.
    :type b_hat: np.ndarray
    :ivar L_hat: Number of recovered delays.
    :type L_hat: int
    :ivar residual_power: Residual power at the stop.
    :type residual_power: float
    :ivar residual_history: Residual power after each iteration, starting with ||y||^2.
    :type residual_history: list[float]
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_K_hat: np.ndarray = Field(..., description="Estimated channel on all subcarriers")
    method: EstimationMethod = Field(..., description="Estimation method")
    support_tau_hat: np.ndarray = Field(default_factory=lambda: np.zeros(0), description="Recovered delays")
    b_hat: np.ndarray = Field(default_factory=lambda: np.zeros(0, dtype=complex), description="LS coefficients")
    L_hat: int = Field(0, ge=0, description="Number of recovered delays")
    residual_power: float = Field(0.0, ge=0, description="Residual power at the stop")
    residual_history: list[float] = Field(default_factory=list, description="Residual power per iteration")

    @model_validator(mode="after")
    def check_support(self) -> "ChannelEstimate":
        if self.method not in ("ml-m", "perfect-csi"):
            if not self.L_hat == len(self.support_tau_hat) == len(self.b_hat):
                raise ValueError("L_hat must match the support and coefficient lengths")
        return self


class ErrorCovModel(BaseModel):
    """
    Represents an error covariance Sigma = F_{K,M} inner F_{K,M}^H.

    ``nu2`` is the per-coefficient MSE, trace(inner) / K.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: CovKind = Field(..., description="How the covariance was obtained")
    nu2: float = Field(..., ge=0, description="MSE per coefficient")
    inner: np.ndarray = Field(..., description="M x M inner matrix")
    K: int = Field(..., gt=0, description="DFT size")
    sample_count: int = Field(0, ge=0, description="Trials behind an empirical model")

    def covariance(self) -> np.ndarray:
        M = self.inner.shape[0]
        F = np.fft.fft(np.eye(self.K, M), axis=0) / np.sqrt(self.K)
        return F @ self.inner @ F.conj().T


class OmpErrorProbe(BaseModel):
    """
    Represents the split of the CS error into its two terms over a batch of trials.

    :ivar trials: Number of trials.
    :ivar E_Lhat: Mean number of recovered delays.
    :ivar mse: Mean ||h_K - h_K_hat||^2 / K.
    :ivar term_noise: Mean ||F P (b - b_hat)||^2 / K, the second-step error.
    :ivar term_residual: Mean residual rho(T_hat), the first-step error.
    :ivar sigma2: Noise variance of the batch.
    :ivar N: Number of pilots.
    """
    trials: int = Field(..., gt=0)
    E_Lhat: float = Field(..., ge=0)
    mse: float = Field(..., ge=0)
    term_noise: float = Field(..., ge=0)
    term_residual: float = Field(..., ge=0)
    sigma2: float = Field(..., ge=0)
    N: int = Field(..., gt=0)

    @property
    def asymptote(self) -> float:
        """2 E[L_hat] sigma^2 / N."""
        return 2 * self.E_Lhat * self.sigma2 / self.N

    @property
    def noise_floor_term(self) -> float:
        """E[L_hat] sigma^2 / N."""
        return self.E_Lhat * self.sigma2 / self.N
