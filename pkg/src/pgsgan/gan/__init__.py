"""Generator/critic networks, the factorised order policy, losses and training."""
from .bandit import analytic_gradient, reinforce_bandit_check, reinforce_gradient
from .baseline import round_half_away, round_to_discrete
from .losses import LOSS_FORMULAS, VARIANTS, batch_baseline, critic_loss, generator_baseline, generator_loss
from .nets import ContinuousGenerator, Critic, Generator, NetConfig
from .policy import (
    BY_CHANCE_ENTROPY,
    BY_CHANCE_NLL,
    Policy,
    enforce_mo_rule,
    entropy,
    joint_distribution,
    nll,
    nll_tensor,
    sample_order,
    sample_orders,
)
from .trainer import (
    MODELS,
    ContinuousModel,
    PolicyModel,
    TrainConfig,
    TrainingAborted,
    TrainState,
    critic_score,
    generate_policy,
    fit,
    load_model,
    policy_gradient_loss,
    train_step,
)
