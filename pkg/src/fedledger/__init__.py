"""Desk-scale federated learning simulator with adaptive differential
privacy, Renyi accounting, and a simulated blockchain ledger backed by a
content-addressed store."""

from .backend import active_backend
from .cas import COORDINATOR_ID, ContentAddress, ContentStore, decode_update, encode_update
from .data import ClientPartition, Dataset, generate_synthetic, load_csv, partition, save_csv, train_test_split
from .federation import (
    ClientState,
    DivergenceError,
    MetricsRecord,
    RoundResult,
    TrainingConfig,
    aggregate,
    local_train,
    run_training,
)
from .ledger import (
    Block,
    ChainReport,
    Ledger,
    LedgerConfig,
    Receipt,
    UpdateTransaction,
    make_transaction,
    tx_cost,
    verify_exported_chain,
)
from .model import (
    Batch,
    ConfigurationError,
    LayerLayout,
    LayerSpan,
    ParameterVector,
    accuracy,
    forward,
    gradient,
    init_params,
    loss,
    mlp_layout,
)
from .personalization import (
    ImportanceProfile,
    PersonalizationMask,
    all_shared_mask,
    build_mask,
    fisher_diagonal,
    layer_importance,
    merge_models,
)
from .privacy import (
    ALPHA_GRID,
    AccountantState,
    InfeasiblePrivacyBudgetError,
    NoiseScales,
    PrivacySpec,
    adaptive_noise,
    calibrate_noise,
    clip_update,
    gaussian_sigma,
    laplace_scale,
    rdp_of_gaussian,
    rdp_to_dp,
)
from .rng import RngStream, derive_key

__version__ = "0.1.0"
