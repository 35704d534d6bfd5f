"""Process reward modeling for sparse-reward sequential decision tasks.

Pipeline: collect trajectories, estimate step labels (Monte-Carlo or
TD+GAE), train a step scorer on the combined value + progress loss, then
spend it at test time (Best-of-N, beam search) or as a reward source for
PPO. Small exact environments with backward-induction oracles keep every
estimator verifiable.
"""

__version__ = "0.1.0"

from .envs import (
    BEGIN_ACTION,
    Action,
    CraftDag,
    Environment,
    EnvState,
    GridNav,
    Observation,
    OutcomeReward,
    Task,
    exact_q,
    make_env,
)
from .labeling import (
    CostLedger,
    LabeledStep,
    TdConfig,
    cost_ratio,
    estimate_mc,
    estimate_td_gae,
    gae_advantages,
)
from .policy import (
    BasePolicy,
    LinearPolicy,
    TabularPolicy,
    Trajectory,
    behavior_clone,
    replay_actions,
    rollout,
    rollout_batch,
)
from .rewards import (
    RewardModel,
    RmConfig,
    StepScore,
    implied_advantages,
    make_reward_model,
    make_targets_orm,
    make_targets_pvm,
)
from .harness import (
    ExperimentSpec,
    export_value_histogram,
    run_experiment,
    split_tasks,
    summarize,
)
from .ppo import PpoConfig, RlReport, evaluate_policy, ppo_train
from .search import SearchConfig, SearchResult, beam_search, best_of_n
from .training import LossReport, TrainConfig, loss_a, loss_q, train
