"""Two-level super-resolution architecture search engine."""

from .space import (
    ArchSpec,
    ArchValidationError,
    CellSpec,
    NodeSpec,
    NormalOp,
    SpaceConfig,
    TokenDecodeError,
    UpsampleOp,
    arch_from_json,
    arch_to_dot,
    arch_to_json,
    arch_to_tokens,
    random_arch,
    space_cardinality,
    tokens_to_arch,
    validate_arch,
)
from .cost import CostConfig, CostReport, TensorShape, arch_flops, cell_flops, op_flops, shape_trace
from .controller import (
    ArchSample,
    ControllerConfig,
    ControllerParams,
    controller_backward,
    sample_arch,
    sample_cell,
    sample_position,
    score_arch,
    softmax,
)
from .evaluators import (
    ExternalEvaluator,
    Measurement,
    SurrogateConfig,
    SurrogateEvaluator,
    surrogate_evaluate,
)
from .training import (
    AdamConfig,
    AdamState,
    RewardConfig,
    SearchLog,
    TrainConfig,
    adam_update,
    cosine_lr,
    derive,
    init_search_state,
    joint_reward,
    reinforce_step,
    run_search,
    surrogate_profile,
)

__version__ = "0.1.0"
