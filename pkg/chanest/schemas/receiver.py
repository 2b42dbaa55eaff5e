import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal


ModulationKind = Literal["qpsk", "qam16"]

# Gray-coded amplitude levels of one 16QAM axis, indexed by the two axis bits
QAM16_AXIS_LEVELS = np.array([-3.0, -1.0, 3.0, 1.0])


class ModulationScheme(BaseModel):
    """
    Represents a Gray-mapped constellation with zero mean and unit average energy.

    Symbol labels read the bits most significant first. QPSK maps (b0, b1) to
    ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2); 16QAM maps (b0, b1) to the in-phase
    and (b2, b3) to the quadrature level with 00 -> -3, 01 -> -1, 11 -> 1,
    10 -> 3, scaled by 1/sqrt(10).

    :ivar kind: "qpsk" or "qam16".
    :type kind: ModulationKind
    """
    model_config = ConfigDict(frozen=True)

    kind: ModulationKind = Field("qpsk", description="Constellation")

    @property
    def bits_per_symbol(self) -> int:
        return 2 if self.kind == "qpsk" else 4

    @property
    def constellation(self) -> np.ndarray:
        labels = np.arange(2 ** self.bits_per_symbol)
        if self.kind == "qpsk":
            b0, b1 = labels >> 1 & 1, labels & 1
            return ((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2)
        in_phase = QAM16_AXIS_LEVELS[labels >> 2 & 3]
        quadrature = QAM16_AXIS_LEVELS[labels & 3]
        return (in_phase + 1j * quadrature) / np.sqrt(10)


class EqualizerInput(BaseModel):
    """
    Represents what the linear MMSE equalizer knows about a data frame.

    :ivar h_K_hat: Estimated channel on all K subcarriers.
    :type h_K_hat: np.ndarray
    :ivar nu2: Per-coefficient variance of the estimation error.
    :type nu2: float
    :ivar sigma2: Noise variance per subcarrier.
    :type sigma2: float
    :ivar input_cov: Covariance Sigma_x of the data symbols, None for i.i.d. unit-energy inputs.
    :type input_cov: np.ndarray | None
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_K_hat: np.ndarray = Field(..., description="Estimated channel")
    nu2: float = Field(..., ge=0, description="Estimation error variance per coefficient")
    sigma2: float = Field(..., ge=0, description="Noise variance")
    input_cov: np.ndarray | None = Field(None, description="Input covariance, None for i.i.d. unit inputs")

    @model_validator(mode="after")
    def check_cov(self) -> "EqualizerInput":
        if self.input_cov is None:
            return self
        K = len(self.h_K_hat)
        if self.input_cov.shape != (K, K):
            raise ValueError(f"Input covariance must be {K} x {K}")
        if not np.allclose(self.input_cov, self.input_cov.conj().T, atol=1e-12):
            raise ValueError("Input covariance must be Hermitian")
        if np.linalg.eigvalsh(self.input_cov).min() < -1e-10:
            raise ValueError("Input covariance must be positive semidefinite")
        return self

    @property
    def K(self) -> int:
        return len(self.h_K_hat)

    def sigma_x(self) -> np.ndarray:
        return np.eye(self.K, dtype=complex) if self.input_cov is None else self.input_cov


class MmseSolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    B: np.ndarray = Field(..., description="K x K equalizer matrix")
    regularized: bool = Field(False, description="The system was singular and a ridge was added")


class BerCount(BaseModel):
    bit_errors: int = Field(..., ge=0)
    bits: int = Field(..., ge=0)
    symbols: int = Field(..., ge=0)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")
