"""Multitask architecture/hyperparameter search with a transferable
recurrent controller and a synthetic surrogate-task family."""

from .errors import CheckpointError, ConfigError, NumericError, TamlError
from .metrics import (
    TrialLog,
    TrialRecord,
    accuracy_topn,
    embedding_similarity,
    export_learning_curve,
    trials_to_threshold,
)
from .policy import (
    ControllerConfig,
    ControllerParams,
    OptState,
    PolicyRollout,
    add_task_embedding,
    apply_update,
    checkpoint_load,
    checkpoint_save,
    greedy_spec,
    init_opt_state,
    init_params,
    log_prob,
    policy_gradient,
    sample_rollout,
    step_probs,
)
from .reward_stats import RewardStats
from .search_space import (
    Dimension,
    ModelSpec,
    SearchSpace,
    build_space,
    load_preset,
    table1_text_space,
)
from .seeding import derive_seed
from .tasks import Evaluation, FamilyConfig, TaskDefinition, evaluate, make_task_family
from .trainer import (
    RunConfig,
    RunResult,
    run,
    run_ablation_no_task_embedding,
    run_fixed_architecture_transfer,
    run_multitask,
    run_random_search,
    run_single_task,
    run_transfer,
)

__version__ = "0.1.0"
