"""Emulator-guided neural co-processor: training, evaluation and co-adaptation."""

from .dataset import (
    EmulatorDataset,
    StimSamplerSpec,
    TaskDistribution,
    radial_tasks,
    sample_stim_dataset,
)
from .evaluation import (
    COADAPT_PLASTICITY,
    POLICY_MODES,
    CoadaptReport,
    EvalMetrics,
    closed_loop_eval,
    coadaptation_session,
)
from .model import (
    CoprocConfig,
    CoprocModel,
    FrozenEmulatorError,
    LossValue,
    behaviour_loss,
    build_model,
    en_digest,
    en_inputs,
    init_emulator,
    init_ncp,
    integrator_layer,
)
from .training import (
    EpochRecord,
    NcpBatch,
    NcpPolicy,
    SessionRecord,
    emulator_r2,
    fit_ncp_offline,
    ncp_forward,
    ncp_loss_and_grad,
    ncp_path_grad_check,
    rollout_ncp,
    train_emulator,
    train_ncp,
)
