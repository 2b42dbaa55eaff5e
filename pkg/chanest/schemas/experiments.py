import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal
from chanest.schemas.channel import AmplitudeConfig, ChannelConfig, DelayConfig
from chanest.schemas.estimators import EstimatorConfig
from chanest.schemas.ofdm import OfdmGrid
from chanest.schemas.receiver import ModulationKind


ExperimentKind = Literal["estimation", "rho-bounds", "ci-hist", "ci-cdf", "ber"]

SMOKE_TRIALS = 50
DEFAULT_TRIALS = 1000

CSV_COLUMNS: dict[str, list[str]] = {
    "estimation": [
        "model", "snr_db", "method", "trials", "mse_mean", "mse_std", "mse_db",
        "lhat_mean", "lhat_std", "l_mean", "theory_mse", "theory_mse_db",
    ],
    "rho-bounds": ["model", "d", "mean_rho_bar", "bound_product", "bound_geometric_h", "bound_geometric_alpha"],
    "ci-hist": ["d", "bin_left", "bin_right", "count", "fraction_le_one"],
    "ci-cdf": ["model", "adjusted_ci", "empirical_cdf"],
    "ber": ["model", "snr_db", "method", "modulation", "ber", "symbols"],
}


class ModelVariant(BaseModel):
    """
    Represents a named variant of the channel block.

    :ivar name: Name written in the model column of the results.
    :ivar amplitude: Amplitude block replacing the base one, if given.
    :ivar delay: Delay block replacing the base one, if given.
    :ivar gaussian: Use an i.i.d. complex-Gaussian non-sparse channel instead of MPCs.
    """
    name: str = Field(..., min_length=1, description="Model name in result tables")
    amplitude: AmplitudeConfig | None = Field(None, description="Amplitude override")
    delay: DelayConfig | None = Field(None, description="Delay override")
    gaussian: bool = Field(False, description="Non-sparse i.i.d. reference channel")

    def apply(self, base: ChannelConfig) -> ChannelConfig:
        update = {}
        if self.amplitude is not None:
            update["amplitude"] = self.amplitude
        if self.delay is not None:
            update["delay"] = self.delay
        return ChannelConfig.model_validate(base.model_copy(update=update).model_dump())


class ExperimentSpec(BaseModel):
    """
    Represents one batch experiment.

    :ivar name: Experiment name, also the stem of the output files.
    :type name: str
    :ivar kind: What the experiment measures.
    :type kind: ExperimentKind
    :ivar description: One-line description.
    :type description: str
    :ivar seed: Experiment seed.
    :type seed: int
    :ivar trials: Monte Carlo trials per model.
    :type trials: int
    :ivar snr_grid_db: Sorted SNR grid in dB.
    :type snr_grid_db: list[float]
    :ivar channel: Base channel block.
    :type channel: ChannelConfig
    :ivar grid: OFDM grid.
    :type grid: OfdmGrid
    :ivar models: Named channel variants, the base block alone when empty.
    :type models: list[ModelVariant]
    :ivar estimators: Estimators under test.
    :type estimators: list[EstimatorConfig]
    :ivar modulation: Constellation of BER experiments.
    :type modulation: ModulationKind | None
    :ivar frames_per_block: Frames per block in BER experiments, pilot frame included.
    :type frames_per_block: int
    :ivar calibration_trials: Trials of the E[L_hat] calibration in BER experiments.
    :type calibration_trials: int
    :ivar d_max: Largest number of recovered taps in the compressibility experiments.
    :type d_max: int
    :ivar hist_bins: Bins of the CI growth histogram.
    :type hist_bins: int
    :ivar hist_range: Range of the CI growth histogram, outliers go to the edge bins.
    :type hist_range: tuple[float, float]
    :ivar outputs: Output directory.
    :type outputs: str
    """
    name: str = Field(..., min_length=1, description="Experiment name")
    kind: ExperimentKind = Field(..., description="Experiment kind")
    description: str = Field("", description="One-line description")
    seed: int = Field(0, ge=0, description="Experiment seed")
    trials: int = Field(DEFAULT_TRIALS, ge=1, description="Trials per model")
    snr_grid_db: list[float] = Field(default_factory=list, description="SNR grid in dB")
    channel: ChannelConfig = Field(default_factory=ChannelConfig, description="Base channel block")
    grid: OfdmGrid = Field(default_factory=OfdmGrid, description="OFDM grid")
    models: list[ModelVariant] = Field(default_factory=list, description="Channel variants")
    estimators: list[EstimatorConfig] = Field(default_factory=list, description="Estimators under test")
    modulation: ModulationKind | None = Field(None, description="Constellation for BER")
    frames_per_block: int = Field(10, ge=2, description="Frames per block, pilot included")
    calibration_trials: int = Field(50, ge=1, description="Trials of the E[L_hat] calibration")
    d_max: int = Field(40, ge=1, description="Largest d of the compressibility tables")
    hist_bins: int = Field(40, ge=1, description="Histogram bins")
    hist_range: tuple[float, float] = Field((0.5, 1.5), description="Histogram range")
    outputs: str = Field("results", description="Output directory")

    @model_validator(mode="after")
    def check_spec(self) -> "ExperimentSpec":
        if self.snr_grid_db != sorted(self.snr_grid_db):
            raise ValueError("snr_grid_db must be sorted")
        if self.grid.M != self.channel.M:
            raise ValueError("grid.M must equal channel.M")
        if self.kind in ("estimation", "ber"):
            if not self.snr_grid_db:
                raise ValueError(f"{self.kind} experiments need an SNR grid")
            if not self.estimators:
                raise ValueError(f"{self.kind} experiments need at least one estimator")
        if self.kind == "ber" and self.modulation is None:
            raise ValueError("ber experiments need a modulation")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError("Estimator labels must be unique")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("Model names must be unique")
        if any(m.gaussian for m in self.models):
            if self.kind == "ber" or any(e.method == "genie-ls" for e in self.estimators):
                raise ValueError("Gaussian reference channels have no MPCs for ber or genie-ls")
        if self.hist_range[0] >= self.hist_range[1]:
            raise ValueError("hist_range must be increasing")
        return self

    def variants(self) -> list[tuple[ModelVariant, ChannelConfig]]:
        if not self.models:
            return [(ModelVariant(name=self.channel.amplitude.kind), self.channel)]
        return [(model, model.apply(self.channel)) for model in self.models]

    def override(self, trials: int | None = None, seed: int | None = None) -> "ExperimentSpec":
        """Returns a re-validated copy with the given trial count and seed; ``None`` keeps the current value."""
        update = {k: v for k, v in (("trials", trials), ("seed", seed)) if v is not None}
        if not update:
            return self
        return ExperimentSpec.model_validate({**self.model_dump(), **update})


class SweepResult(BaseModel):
    """
    Represents the reduced outcome of a sweep.

    :ivar spec: The experiment that produced it.
    :ivar table: Reduced table with the columns of the experiment kind.
    :ivar raw: Per-trial rows the table was reduced from.
    :ivar elapsed_s: Wall time of the sweep.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ExperimentSpec
    table: pd.DataFrame
    raw: pd.DataFrame
    elapsed_s: float = Field(0.0, ge=0)
