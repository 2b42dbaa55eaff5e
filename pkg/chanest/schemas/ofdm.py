import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class OfdmGrid(BaseModel):
    """
    Represents the OFDM grid with a comb of N pilots among K subcarriers.

    :ivar K: Number of subcarriers (DFT size).
    :type K: int
    :ivar M: Cyclic prefix length, equal to the FIR length.
    :type M: int
    :ivar N: Number of pilot subcarriers.
    :type N: int
    """
    model_config = ConfigDict(frozen=True)

    K: int = Field(512, gt=0, description="DFT size")
    M: int = Field(128, gt=0, description="CP length = FIR length")
    N: int = Field(128, gt=0, description="Number of pilots")

    @model_validator(mode="after")
    def check_comb(self) -> "OfdmGrid":
        if not self.M <= self.N <= self.K:
            raise ValueError("Grid requires M <= N <= K")
        if self.K % self.N != 0:
            raise ValueError("Comb pilots require K/N to be an integer")
        return self

    @property
    def spacing(self) -> int:
        return self.K // self.N

    @property
    def pilot_indices(self) -> np.ndarray:
        return np.arange(self.N) * self.spacing


class FreqChannel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_K: np.ndarray = Field(..., description="Channel on all K subcarriers")
    h_NK: np.ndarray | None = Field(None, description="Channel on the N pilot subcarriers")


class PilotObservation(BaseModel):
    """
    Represents the received pilot frame y_N = D(x_N) h_{N/K} + z_N.

    :ivar y_N: Received pilot symbols.
    :type y_N: np.ndarray
    :ivar x_N: Transmitted unit-modulus pilots.
    :type x_N: np.ndarray
    :ivar noise_var_sigma2: Noise variance per pilot subcarrier.
    :type noise_var_sigma2: float
    :ivar y_derotated: D(x_N)^H y_N, the observation seen with all-ones pilots.
    :type y_derotated: np.ndarray
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y_N: np.ndarray = Field(..., description="Received pilot symbols")
    x_N: np.ndarray = Field(..., description="Unit-modulus pilot symbols")
    noise_var_sigma2: float = Field(..., ge=0, description="Noise variance per subcarrier")
    y_derotated: np.ndarray = Field(..., description="De-rotated observation D(x_N)^H y_N")

    @model_validator(mode="after")
    def check_pilots(self) -> "PilotObservation":
        if not np.allclose(np.abs(self.x_N), 1.0, atol=1e-12):
            raise ValueError("Pilots must have unit modulus")
        if len(self.x_N) != len(self.y_N):
            raise ValueError("Pilots and observation must have the same length")
        return self
