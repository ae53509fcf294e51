"""
Configuration models for epicscore.

Defines model hyperparameters and experiment settings using Pydantic for
validation.
"""

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PredictorKind(str, Enum):
    """Base predictor families."""
    
    KNN_MEAN = "knn_mean"
    KNN_QUANTILE = "knn_quantile"
    MLP_MEAN = "mlp_mean"
    MLP_PINBALL = "mlp_pinball"
    KNN_PROBA = "knn_proba"
    EXTERNAL = "external"


class PredictiveKind(str, Enum):
    """Bayesian predictive-CDF model families."""
    
    GP_EXACT = "gp_exact"
    MDN_DROPOUT = "mdn_dropout"
    BART_LITE = "bart_lite"
    KNN_EMPIRICAL = "knn_empirical"


# Registered experiment methods
REGRESSION_METHODS: Tuple[str, ...] = (
    "reg_split",
    "weighted",
    "mondrian",
    "cqr",
    "cqr_r",
    "epic_gp",
    "epic_mdn",
    "epic_bart",
    "epic_knn",
    "epic_cqr_gp",
    "epic_cqr_mdn",
    "epic_cqr_bart",
    "epic_cqr_knn",
)
CLASSIFICATION_METHODS: Tuple[str, ...] = (
    "aps",
    "epic_aps_knn",
    "epic_aps_mdn",
    "epic_aps_continuous_knn",
    "epic_aps_continuous_gp",
)
METHOD_NAMES: Tuple[str, ...] = REGRESSION_METHODS + CLASSIFICATION_METHODS


class PredictorConfig(BaseModel):
    """Configuration for a base predictor g(x), q_lo(x), q_hi(x) or classifier."""
    
    kind: PredictorKind = Field(
        default=PredictorKind.KNN_MEAN,
        description="Predictor family"
    )
    n_neighbors: int = Field(
        default=10,
        ge=1,
        description="Neighbors for k-NN predictors"
    )
    quantile: Optional[float] = Field(
        default=None,
        gt=0.0,
        lt=1.0,
        description="Target quantile for quantile predictors"
    )
    hidden_layers: List[int] = Field(
        default=[64, 32, 16],
        description="Hidden layer widths for MLP predictors"
    )
    dropout: float = Field(
        default=0.1,
        ge=0.0,
        lt=1.0,
        description="Dropout rate used while training MLP predictors"
    )
    learning_rate: float = Field(
        default=0.01,
        gt=0.0,
        description="Adam learning rate"
    )
    max_epochs: int = Field(
        default=300,
        ge=1,
        description="Maximum training epochs"
    )
    patience: int = Field(
        default=30,
        ge=1,
        description="Early-stopping patience in epochs"
    )
    batch_size: Optional[int] = Field(
        default=None,
        ge=1,
        description="Mini-batch size (None = chosen from the data size)"
    )
    validation_fraction: float = Field(
        default=0.3,
        gt=0.0,
        lt=1.0,
        description="Share of training data held out for early stopping"
    )
    
    @field_validator('hidden_layers')
    @classmethod
    def validate_hidden_layers(cls, v):
        """Ensure every layer has at least one unit."""
        if not v or any(width < 1 for width in v):
            raise ValueError(f"Hidden layers must be non-empty positive widths: {v}")
        return v
    
    @model_validator(mode='after')
    def validate_quantile_kind(self):
        """Quantile predictors need a quantile level."""
        needs_quantile = self.kind in (PredictorKind.KNN_QUANTILE, PredictorKind.MLP_PINBALL)
        if needs_quantile and self.quantile is None:
            self.quantile = 0.5
        return self


class GpConfig(BaseModel):
    """Exact Gaussian process with an RBF kernel, hyperparameters by grid search."""
    
    lengthscale_grid: List[float] = Field(
        default=[0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2],
        description="Candidate RBF lengthscales (standardized feature units)"
    )
    signal_variance_grid: List[float] = Field(
        default=[0.25, 0.5, 1.0, 2.0, 4.0],
        description="Candidate kernel signal variances (normalized score units)"
    )
    noise_variance_grid: List[float] = Field(
        default=[0.01, 0.03, 0.1, 0.3, 1.0],
        description="Candidate observation noise variances"
    )
    max_train_points: int = Field(
        default=2000,
        ge=5,
        description="Uniform subsample size for the final fit"
    )
    search_max_points: int = Field(
        default=500,
        ge=5,
        description="Subsample size used for the hyperparameter grid search"
    )
    
    @field_validator('lengthscale_grid', 'signal_variance_grid', 'noise_variance_grid')
    @classmethod
    def validate_grid(cls, v):
        """Grids must be non-empty and strictly positive."""
        if not v or any(value <= 0 for value in v):
            raise ValueError(f"Grid values must be > 0: {v}")
        return sorted(v)


class MdnConfig(BaseModel):
    """Mixture density network with frozen MC-dropout masks."""
    
    n_components: int = Field(
        default=3,
        ge=1,
        description="Gaussian mixture components K"
    )
    hidden_layers: List[int] = Field(
        default=[64, 64],
        description="Hidden layer widths"
    )
    dropout: float = Field(
        default=0.5,
        gt=0.0,
        lt=1.0,
        description="Dropout rate on every hidden layer"
    )
    mc_passes: int = Field(
        default=100,
        ge=1,
        description="Number T of frozen dropout masks"
    )
    learning_rate: float = Field(
        default=1e-3,
        gt=0.0,
        description="Adam learning rate"
    )
    lr_step_epochs: int = Field(
        default=5,
        ge=1,
        description="Epochs between learning-rate decays"
    )
    lr_decay: float = Field(
        default=0.99,
        gt=0.0,
        le=1.0,
        description="Multiplicative learning-rate decay"
    )
    max_epochs: int = Field(
        default=300,
        ge=1,
        description="Maximum training epochs"
    )
    patience: int = Field(
        default=30,
        ge=1,
        description="Early-stopping patience in epochs"
    )
    batch_size: Optional[int] = Field(
        default=None,
        ge=1,
        description="Mini-batch size (None = 40 / 125 / 250 by data size)"
    )
    validation_fraction: float = Field(
        default=0.3,
        gt=0.0,
        lt=1.0,
        description="Share of D held out for early stopping"
    )
    cdf_mode: str = Field(
        default="analytic",
        description="'analytic' mixture-CDF averaging or 'sampling' empirical CDF"
    )
    samples_per_pass: int = Field(
        default=20,
        ge=1,
        description="Score samples per dropout pass in sampling mode"
    )
    
    @field_validator('cdf_mode')
    @classmethod
    def validate_cdf_mode(cls, v):
        """Only the two documented modes exist."""
        if v not in ("analytic", "sampling"):
            raise ValueError(f"cdf_mode must be 'analytic' or 'sampling': {v}")
        return v
    
    @field_validator('hidden_layers')
    @classmethod
    def validate_hidden_layers(cls, v):
        """Ensure every layer has at least one unit."""
        if not v or any(width < 1 for width in v):
            raise ValueError(f"Hidden layers must be non-empty positive widths: {v}")
        return v


class BartConfig(BaseModel):
    """Homoscedastic Normal BART sampled by backfitting MCMC."""
    
    n_trees: int = Field(
        default=20,
        ge=1,
        description="Number of trees m"
    )
    burn_in: int = Field(
        default=200,
        ge=0,
        description="MCMC iterations discarded"
    )
    n_draws: int = Field(
        default=200,
        ge=1,
        description="MCMC iterations kept (before thinning)"
    )
    keep_every: int = Field(
        default=2,
        ge=1,
        description="Thinning interval for stored posterior draws"
    )
    n_chains: int = Field(
        default=1,
        ge=1,
        description="Independent chains, merged in chain order"
    )
    split_alpha: float = Field(
        default=0.95,
        gt=0.0,
        lt=1.0,
        description="Tree prior: base split probability"
    )
    split_beta: float = Field(
        default=2.0,
        ge=0.0,
        description="Tree prior: depth penalty exponent"
    )
    leaf_prior_k: float = Field(
        default=2.0,
        gt=0.0,
        description="Leaf prior scale: sigma_mu = (range/2) / (k sqrt(m))"
    )
    sigma_nu: float = Field(
        default=3.0,
        gt=0.0,
        description="Degrees of freedom of the sigma^2 inverse-chi^2 prior"
    )
    sigma_quantile: float = Field(
        default=0.9,
        gt=0.0,
        lt=1.0,
        description="Prior probability that sigma is below the data sd"
    )
    p_grow: float = Field(default=0.4, ge=0.0, description="Grow proposal probability")
    p_prune: float = Field(default=0.4, ge=0.0, description="Prune proposal probability")
    p_change: float = Field(default=0.2, ge=0.0, description="Change proposal probability")
    n_cutpoints: int = Field(
        default=100,
        ge=1,
        description="Candidate split values per feature"
    )
    
    @model_validator(mode='after')
    def validate_proposals(self):
        """Proposal probabilities must sum to one."""
        total = self.p_grow + self.p_prune + self.p_change
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Proposal probabilities must sum to 1, got {total}")
        if self.p_grow <= 0 or self.p_prune <= 0:
            raise ValueError("Grow and prune probabilities must be positive")
        return self


class KnnEmpiricalConfig(BaseModel):
    """Empirical CDF of the scores of the k nearest calibration neighbors."""
    
    n_neighbors: Optional[int] = Field(
        default=None,
        ge=1,
        description="Neighbors k (None = max(50, n/20), capped at n)"
    )


class CalibrationSplitRule(BaseModel):
    """How D_cal is divided into D_cal,1 (predictive fit) and D_cal,2 (threshold)."""
    
    cal2_fraction: float = Field(
        default=0.3,
        gt=0.0,
        lt=1.0,
        description="Share of D_cal reserved for the threshold"
    )
    cap_threshold: int = Field(
        default=3000,
        ge=1,
        description="Above this calibration size the reserve is capped"
    )
    cap: int = Field(
        default=1000,
        ge=1,
        description="Reserved points for large calibration sets"
    )
    min_part: int = Field(
        default=5,
        ge=1,
        description="Minimum size of either calibration part"
    )


class DatasetSpec(BaseModel):
    """Where experiment data comes from."""
    
    kind: str = Field(
        default="bimodal",
        description="'bimodal' synthetic regression, 'blobs' classification, or 'csv'"
    )
    n: int = Field(
        default=5000,
        ge=8,
        description="Sample size for synthetic datasets"
    )
    k_classes: int = Field(
        default=3,
        ge=2,
        description="Classes for the blobs dataset"
    )
    spread: float = Field(
        default=1.0,
        gt=0.0,
        description="Cluster standard deviation for the blobs dataset"
    )
    path: Optional[str] = Field(
        default=None,
        description="CSV file for kind='csv'"
    )
    target_column: Optional[str] = Field(
        default=None,
        description="Target column name for kind='csv'"
    )
    label_mode: bool = Field(
        default=False,
        description="Treat the CSV target as integer labels"
    )
    predictions_path: Optional[str] = Field(
        default=None,
        description="Optional CSV with g / q_lo / q_hi columns, row-aligned"
    )
    variance_convention: str = Field(
        default="sd",
        description="Read the synthetic noise parameters as 'sd' or 'var'"
    )
    
    @field_validator('kind')
    @classmethod
    def validate_kind(cls, v):
        """Only known dataset sources."""
        if v not in ("bimodal", "blobs", "csv"):
            raise ValueError(f"Unknown dataset kind: {v}")
        return v
    
    @field_validator('variance_convention')
    @classmethod
    def validate_convention(cls, v):
        """Either standard deviation or variance."""
        if v not in ("sd", "var"):
            raise ValueError(f"variance_convention must be 'sd' or 'var': {v}")
        return v
    
    @model_validator(mode='after')
    def validate_csv_fields(self):
        """CSV datasets need a path and a target column."""
        if self.kind == "csv" and (not self.path or not self.target_column):
            raise ValueError("CSV datasets need 'path' and 'target_column'")
        return self
    
    @property
    def is_classification(self) -> bool:
        """Whether the dataset carries labels."""
        return self.kind == "blobs" or (self.kind == "csv" and self.label_mode)
    
    @property
    def label(self) -> str:
        """Short dataset name used in reports."""
        if self.kind == "csv":
            return self.path.replace("\\", "/").rsplit("/", 1)[-1].rsplit(".", 1)[0]
        return self.kind


class ExperimentConfig(BaseModel):
    """Main experiment settings."""
    
    name: str = Field(
        default="experiment",
        description="Experiment name used in reports"
    )
    dataset: DatasetSpec = Field(
        default_factory=DatasetSpec,
        description="Dataset source"
    )
    methods: List[str] = Field(
        default=["reg_split", "weighted", "mondrian", "epic_gp", "epic_knn"],
        description="Methods to run"
    )
    alpha: float = Field(
        default=0.1,
        gt=0.0,
        lt=1.0,
        description="Miscoverage level"
    )
    n_runs: int = Field(
        default=50,
        ge=1,
        description="Independent seeded runs"
    )
    seed: int = Field(
        default=0,
        ge=0,
        description="Base seed; run i uses seed + i unless 'seeds' is given"
    )
    seeds: Optional[List[int]] = Field(
        default=None,
        description="Explicit per-run seeds (length must equal n_runs)"
    )
    split_ratios: Tuple[float, float, float] = Field(
        default=(0.4, 0.4, 0.2),
        description="Train / calibration / test proportions"
    )
    calibration_split: CalibrationSplitRule = Field(
        default_factory=CalibrationSplitRule,
        description="D_cal,1 / D_cal,2 split rule"
    )
    base_model: PredictorConfig = Field(
        default_factory=PredictorConfig,
        description="Mean predictor g(x) (or classifier for label data)"
    )
    quantile_model: PredictorConfig = Field(
        default_factory=lambda: PredictorConfig(kind=PredictorKind.KNN_QUANTILE),
        description="Quantile predictor family for CQR-type methods"
    )
    cqr_alphas: Optional[Tuple[float, float]] = Field(
        default=None,
        description="Quantile levels (alpha_1, alpha_2); None = (alpha/2, 1 - alpha/2)"
    )
    gp: GpConfig = Field(default_factory=GpConfig, description="GP predictive")
    mdn: MdnConfig = Field(default_factory=MdnConfig, description="MDN predictive")
    bart: BartConfig = Field(default_factory=BartConfig, description="BART predictive")
    knn_empirical: KnnEmpiricalConfig = Field(
        default_factory=KnnEmpiricalConfig,
        description="k-NN empirical predictive"
    )
    mondrian_bins: int = Field(
        default=10,
        ge=1,
        description="Equal-mass Mondrian bins"
    )
    ssc_bins: int = Field(
        default=15,
        ge=1,
        description="Set-size bins G for size-stratified coverage"
    )
    output: Optional[str] = Field(
        default=None,
        description="Output path for reports (not part of the config hash)"
    )
    
    model_config = ConfigDict(validate_assignment=True, extra="forbid")
    
    @field_validator('methods')
    @classmethod
    def validate_methods(cls, v):
        """Methods must come from the registered set, without duplicates."""
        if not v:
            raise ValueError("At least one method is required")
        unknown = [m for m in v if m not in METHOD_NAMES]
        if unknown:
            raise ValueError(f"Unknown method(s): {', '.join(unknown)}")
        if len(set(v)) != len(v):
            raise ValueError(f"Duplicate methods: {v}")
        return v
    
    @field_validator('split_ratios')
    @classmethod
    def validate_ratios(cls, v):
        """Ratios are non-negative and sum to one."""
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"Split ratios must be >= 0 and sum to 1: {v}")
        return v
    
    @model_validator(mode='after')
    def validate_consistency(self):
        """Seeds length and method/task compatibility."""
        if self.seeds is not None and len(self.seeds) != self.n_runs:
            raise ValueError(
                f"'seeds' has {len(self.seeds)} entries but n_runs={self.n_runs}"
            )
        allowed = (
            CLASSIFICATION_METHODS if self.dataset.is_classification
            else REGRESSION_METHODS
        )
        wrong = [m for m in self.methods if m not in allowed]
        if wrong:
            task = "classification" if self.dataset.is_classification else "regression"
            raise ValueError(f"Method(s) {', '.join(wrong)} do not apply to {task} data")
        if self.cqr_alphas is not None:
            lo, hi = self.cqr_alphas
            if not 0.0 < lo < hi < 1.0:
                raise ValueError(f"cqr_alphas must satisfy 0 < a1 < a2 < 1: {self.cqr_alphas}")
        return self
    
    def run_seeds(self) -> List[int]:
        """Pre-assigned seed for every run."""
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + i for i in range(self.n_runs)]
    
    def quantile_levels(self) -> Tuple[float, float]:
        """Quantile levels used by CQR-type methods."""
        if self.cqr_alphas is not None:
            return self.cqr_alphas
        return (self.alpha / 2.0, 1.0 - self.alpha / 2.0)
