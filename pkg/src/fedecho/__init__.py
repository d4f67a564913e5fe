"""Asynchronous federated learning with buffered aggregation and
server-side uncertainty-aware distillation.

A deterministic discrete-event simulator drives delayed clients through
local SGD; the server aggregates buffered updates (FedBuff), optionally
followed by entropy-weighted distillation on cached client logits
(FedEcho) or a server-side Adam step (adaptive baseline). The package
also ships executable verifiers for the closed-form decompositions of
the distillation gradient.
"""

__version__ = "0.1.0"

from .algorithms import (  # noqa: F401
    AlgoConfig,
    ClientUpdate,
    adaptive_server_update,
    cache_client_logits,
    fedbuff_update,
    fedecho_update,
    local_sgd,
)
from .data import DatasetSpec, dirichlet_partition, generate  # noqa: F401
from .distill import (  # noqa: F401
    DistillConfig,
    LogitsCache,
    batch_entropy,
    clip_gradient,
    distill_loss_and_grad,
    distillation_round,
    ensemble_teacher_logits,
    interpolate_alpha,
    verify_identity_generic,
    verify_identity_linear,
)
from .errors import ConfigError, NoTeacherAvailable, NumericalError  # noqa: F401
from .estimator import FedEchoClassifier  # noqa: F401
from .models import (  # noqa: F401
    Batch,
    LinearSoftmax,
    Mlp,
    ModelParams,
    ce_loss_and_grad,
    evaluate,
    forward_logits,
    init_params,
    softmax,
)
from .rng import RngStream, draw_uniform, stream  # noqa: F401
from .simulator import (  # noqa: F401
    LARGE_DELAY,
    MILD_DELAY,
    AsyncFederation,
    DelayProfile,
    assign_categories,
    sample_runtime,
)
