"""windtl: lifecycle transfer learning for day-ahead wind power forecasts."""

from .baseline import PhysicalModel, air_density, forecast_physical, physical_power
from .csge import CsgeEnsemble, soft_gate
from .lifecycle import (
    NoveltyEvent,
    NoveltyParams,
    Phase,
    adapt_to_novelty,
    detect_novelty,
    retrieve_similar_situations,
    run_lifecycle,
)
from .nnet import (
    DenseNetwork,
    TrainConfig,
    encode,
    finetune,
    forward,
    grad_check,
    init_network,
    train,
    train_autoencoder,
)
from .preselect import SimilarityRanking, rank_feature_influence, rank_sources, terrain_filter, wasserstein1
from .scenario import ScenarioConfig, default_scenario, load_scenario
from .synthdata import (
    generate_farm_config,
    generate_nwp_series,
    generate_power_series,
    generate_truth_series,
)
from .transfer import (
    MtlNetwork,
    MultiCrossNetwork,
    PseudoLabeledDataset,
    ReplicaSet,
    adapt_new_nwp,
    add_task_head,
    build_replicas,
    pseudo_label,
    self_train,
    train_mtl,
    train_multicross,
    train_universal,
    train_wp1_naive,
)
from .types import (
    FEATURE_NAMES,
    EventKind,
    FarmConfig,
    LifecycleEvent,
    NwpFeatureVector,
    Terrain,
    TimeSeriesDataset,
    ValidationError,
)

__version__ = "0.1.0"
