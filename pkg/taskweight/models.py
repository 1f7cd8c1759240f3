import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Annotated


class LossKind(str, Enum):
    """Supported prediction losses."""
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"
    LOGISTIC = "logistic"


class Activation(str, Enum):
    """Hidden-layer nonlinearities."""
    TANH = "tanh"
    RELU = "relu"


class AdaptationVariant(str, Enum):
    """How a task adapts the meta-parameters before scoring its query set."""
    GRADIENT = "gradient"
    PROTOTYPICAL = "prototypical"


class MetaOrder(str, Enum):
    """Differentiation order through the inner loop."""
    FIRST_ORDER = "first_order"
    FULL = "full"


class CurvatureMode(str, Enum):
    """Representation of second-order terms in F_x and C_xx."""
    DIAG = "diag"
    FULL = "full"


class ValueMode(str, Enum):
    """Representation of the value matrix V_t in the backward pass."""
    DIAG = "diag"
    FULL = "full"


class DynamicsKind(str, Enum):
    """Meta-optimizer used as the trajectory dynamics."""
    SGD = "sgd"
    ADAM = "adam"


class StrategyName(str, Enum):
    """Enumeration of available weighting strategies."""
    UNIFORM = "uniform"
    EXPLORATION = "exploration"
    EXPLOITATION = "exploitation"
    TOW = "tow"


class NominalKind(str, Enum):
    """Initial nominal action sequence for the trajectory solver."""
    UNIFORM = "uniform"
    RANDOM = "random"


class MetaUpdateRule(str, Enum):
    """Which horizon state becomes the next iteration's initial state."""
    FINAL_STATE = "final_state"
    LAST_VISITED = "last_visited"


class CheckName(str, Enum):
    """Diagnostic checks exposed through the CLI."""
    GRADIENTS = "gradients"
    LINEARIZATION = "linearization"
    QUADRATICIZATION = "quadraticization"
    LQR = "lqr"
    THETA_SIGN = "theta_sign"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ---------------------------------------------------------------------------
# Task environments
# ---------------------------------------------------------------------------

class SineFamily(_Frozen):
    """Amplitude and phase ranges of one sine-regression task family."""
    amplitude: Tuple[float, float]
    phase: Tuple[float, float]

    @field_validator("amplitude", "phase")
    @classmethod
    def _ordered(cls, v):
        if v[0] > v[1]:
            raise ValueError(f"range lower bound {v[0]} exceeds upper bound {v[1]}")
        return v


class ClusterFamily(_Frozen):
    """Class centres (n_way rows of input_dim coordinates) of one task family."""
    centers: List[List[float]]


class _EnvironmentBase(_Frozen):
    family_probabilities: List[float]
    m_s: int = Field(5, ge=1)
    m_q: int = Field(15, ge=1)
    noise_std: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_families(self):
        families = getattr(self, "families")
        if not families:
            raise ValueError("environment needs at least one task family")
        check_probabilities(self.family_probabilities, len(families))
        return self

    @property
    def n_families(self) -> int:
        return len(getattr(self, "families"))


class SineEnvironmentConfig(_EnvironmentBase):
    """Sine regression: y = A sin(s - phase) with A and phase drawn per task."""
    kind: Literal["sine"] = "sine"
    families: List[SineFamily]
    input_range: Tuple[float, float] = (-5.0, 5.0)

    @property
    def input_dim(self) -> int:
        return 1

    @property
    def output_dim(self) -> int:
        return 1


class ClusterEnvironmentConfig(_EnvironmentBase):
    """Gaussian-cluster N-way classification."""
    kind: Literal["cluster"] = "cluster"
    n_way: int = Field(3, ge=2)
    input_dim: int = Field(2, ge=1)
    families: List[ClusterFamily]
    cluster_std: float = Field(0.5, gt=0.0)
    task_shift_std: float = Field(0.0, ge=0.0)
    permute_labels: bool = True

    @model_validator(mode="after")
    def _check_centers(self):
        for index, family in enumerate(self.families):
            rows = family.centers
            if len(rows) != self.n_way or any(len(row) != self.input_dim for row in rows):
                raise ValueError(
                    f"family {index} centers must be {self.n_way} rows of {self.input_dim} values"
                )
        return self

    @property
    def output_dim(self) -> int:
        return self.n_way


EnvironmentConfig = Annotated[
    Union[SineEnvironmentConfig, ClusterEnvironmentConfig], Field(discriminator="kind")
]


def check_probabilities(probabilities: List[float], n_families: int) -> None:
    """Validate a categorical distribution over task families."""
    if len(probabilities) != n_families:
        raise ValueError(
            f"expected {n_families} family probabilities, got {len(probabilities)}"
        )
    if any(p < 0.0 for p in probabilities):
        raise ValueError("family probabilities must be non-negative")
    if abs(math.fsum(probabilities) - 1.0) > 1e-12:
        raise ValueError(f"family probabilities sum to {math.fsum(probabilities)}, not 1")


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

class LinearArchitecture(_Frozen):
    kind: Literal["linear"] = "linear"
    in_dim: int = Field(ge=1)
    out_dim: int = Field(ge=1)
    bias: bool = False


class MLPArchitecture(_Frozen):
    kind: Literal["mlp"] = "mlp"
    layer_sizes: List[int]
    activation: Activation = Activation.TANH

    @field_validator("layer_sizes")
    @classmethod
    def _check_sizes(cls, v):
        if len(v) < 2:
            raise ValueError("layer_sizes needs an input and an output width")
        if any(size < 1 for size in v):
            raise ValueError("layer widths must be positive")
        hidden = v[1:-1]
        if len(hidden) > 3 or any(size > 64 for size in hidden):
            raise ValueError("at most 3 hidden layers of at most 64 units are supported")
        return v


class ModelSpec(_Frozen):
    """Predictor architecture, loss and optional loss clipping."""
    architecture: Annotated[
        Union[LinearArchitecture, MLPArchitecture], Field(discriminator="kind")
    ]
    loss: LossKind = LossKind.MSE
    loss_clip: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _check_head(self):
        if self.loss == LossKind.LOGISTIC and self.out_dim != 1:
            raise ValueError("logistic loss needs a single output unit")
        return self

    @property
    def is_linear(self) -> bool:
        return isinstance(self.architecture, LinearArchitecture)

    @property
    def layer_sizes(self) -> List[int]:
        if self.is_linear:
            return [self.architecture.in_dim, self.architecture.out_dim]
        return list(self.architecture.layer_sizes)

    @property
    def activation(self) -> Optional[Activation]:
        return None if self.is_linear else self.architecture.activation

    def layer_has_bias(self, index: int) -> bool:
        return self.architecture.bias if self.is_linear else True

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def parameter_count(self) -> int:
        sizes = self.layer_sizes
        count = 0
        for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            count += n_out * n_in + (n_out if self.layer_has_bias(index) else 0)
        return count


# ---------------------------------------------------------------------------
# Meta-learning, dynamics, cost and solver settings
# ---------------------------------------------------------------------------

class InnerLoopConfig(_Frozen):
    """Task adaptation: step size gamma and number of support-set steps."""
    gamma: float = Field(0.1, ge=0.0, allow_inf_nan=False)
    n_inner_steps: int = Field(1, ge=1)
    variant: AdaptationVariant = AdaptationVariant.GRADIENT


class DynamicsConfig(_Frozen):
    kind: DynamicsKind = DynamicsKind.ADAM
    alpha: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class PriorConfig(_Frozen):
    """Gaussian action prior centred at mu_u with precision beta_u."""
    mu_u: Optional[float] = None
    beta_u: float = Field(10.0, gt=0.0)

    def mean(self, n_tasks: int) -> float:
        """Prior mean, defaulting to 1/M."""
        return 1.0 / n_tasks if self.mu_u is None else float(self.mu_u)


class ILQRConfig(_Frozen):
    n_iterations: int = Field(2, ge=1)
    value_mode: ValueMode = ValueMode.DIAG
    curvature: CurvatureMode = CurvatureMode.DIAG
    meta_order: MetaOrder = MetaOrder.FULL
    nominal: NominalKind = NominalKind.UNIFORM
    eps_min: float = Field(2.0 ** -30, gt=0.0)
    max_line_search_trials: int = Field(40, ge=1)
    acceptance_rtol: float = Field(1e-10, ge=0.0)
    nonnegative_actions: bool = True
    quu_floor: float = Field(1e-8, gt=0.0)


class WeightingConfig(_Frozen):
    strategy: StrategyName = StrategyName.TOW
    kappa: float = Field(1.2, gt=1.0)
    prior: PriorConfig = PriorConfig()
    ilqr: ILQRConfig = ILQRConfig()
    meta_update: MetaUpdateRule = MetaUpdateRule.FINAL_STATE


class TrainingConfig(_Frozen):
    n_iterations: int = Field(200, ge=0)
    horizon: int = Field(5, ge=1)
    batch_size: int = Field(5, ge=1)
    init_scale: float = Field(0.1, ge=0.0)


class EvaluationConfig(_Frozen):
    every: int = Field(10, ge=0)
    n_tasks: int = Field(100, ge=2)
    family_probabilities: Optional[List[float]] = None


class MetricsConfig(_Frozen):
    record_timing: bool = False
    ema_factor: float = Field(0.1, gt=0.0, le=1.0)
    target_loss: Optional[float] = None


class ChecksConfig(_Frozen):
    n_seeds: int = Field(10, ge=1)
    step: float = Field(1e-5, gt=0.0)
    tolerance: float = Field(1e-4, gt=0.0)
    n_lq_problems: int = Field(20, ge=1)
    max_parameters: int = Field(50, ge=1)


class SweepConfig(_Frozen):
    parameter: str = "weighting.prior.beta_u"
    values: List[Any] = [1.0, 10.0, 100.0]
    seeds: List[int] = []


class ExperimentConfig(_Frozen):
    """Complete experiment description loaded from a YAML file."""
    seed: int = Field(0, ge=0)
    environment: EnvironmentConfig
    model: ModelSpec
    inner_loop: InnerLoopConfig = InnerLoopConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    weighting: WeightingConfig = WeightingConfig()
    training: TrainingConfig = TrainingConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    metrics: MetricsConfig = MetricsConfig()
    checks: ChecksConfig = ChecksConfig()
    sweep: SweepConfig = SweepConfig()

    @model_validator(mode="after")
    def _check_compatibility(self):
        env, model = self.environment, self.model
        prototypical = self.inner_loop.variant == AdaptationVariant.PROTOTYPICAL
        if model.in_dim != env.input_dim:
            raise ValueError(f"model input width {model.in_dim} != environment input {env.input_dim}")
        if env.kind == "sine":
            if prototypical:
                raise ValueError("prototypical adaptation needs a classification environment")
            if model.loss != LossKind.MSE:
                raise ValueError("sine regression needs the mse loss")
            if model.out_dim != 1:
                raise ValueError("sine regression needs a single output unit")
        else:
            if model.loss == LossKind.MSE:
                raise ValueError("cluster classification needs a classification loss")
            if prototypical:
                if model.loss != LossKind.CROSS_ENTROPY:
                    raise ValueError("prototypical adaptation needs the cross_entropy loss")
                if env.m_s < env.n_way:
                    raise ValueError("prototypical adaptation needs m_s >= n_way")
            elif model.loss == LossKind.LOGISTIC and env.n_way != 2:
                raise ValueError("logistic loss needs a 2-way environment")
            elif model.loss == LossKind.CROSS_ENTROPY and model.out_dim != env.n_way:
                raise ValueError(f"model output width {model.out_dim} != n_way {env.n_way}")
        if self.evaluation.family_probabilities is not None:
            check_probabilities(self.evaluation.family_probabilities, env.n_families)
        return self

    def evaluation_probabilities(self) -> List[float]:
        """Held-out family distribution, uniform over families by default."""
        if self.evaluation.family_probabilities is not None:
            return list(self.evaluation.family_probabilities)
        n = self.environment.n_families
        return [1.0 / n] * n


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

class EvaluationResult(BaseModel):
    """Schema for held-out evaluation results."""
    mean_loss: float
    mean_accuracy: float
    loss_ci95: float
    accuracy_ci95: float
    n_tasks: int


class ILQRIteration(BaseModel):
    """Diagnostics of one solver iteration."""
    theta1: float
    epsilon: float
    trials: int
    cost_nominal: float
    cost_candidate: float
    accepted: bool
    slack: float = 0.0


class CheckReport(BaseModel):
    """Schema for diagnostic-check results."""
    name: CheckName
    passed: bool
    threshold: float
    measurements: Dict[str, float] = {}
    error: Optional[str] = None


class IterationRecord(BaseModel):
    """Everything logged for one outer training iteration."""
    iteration: int
    weights: List[List[float]]
    train_loss: float
    val_loss: float = math.nan
    val_accuracy: float = math.nan
    theta1: float = math.nan
    epsilon: float = math.nan
    ls_trials: int = 0
    delta_emp: float = 0.0
    wall_ms: float = 0.0
    timings: Dict[str, float] = {}
    ilqr: List[ILQRIteration] = []
