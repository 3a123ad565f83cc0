"""Person clustering in video from face, body and voice track embeddings."""

from .core import (
    ClusteringConfig,
    Dataset,
    Partition,
    Track,
    check_dataset,
    check_partition,
    validate_dataset,
)
from .distance import cosine_distance, knn, ratio_distinctive
from .estimator import PersonClusterer
from .metrics import (
    MetricsReport,
    character_pr,
    cooccurrence,
    evaluate,
    hungarian,
    nmi,
    wcp,
)
from .pipeline import (
    CannotLinkSet,
    PipelineResult,
    build_cannot_links,
    reduce_to_oracle,
    run_pipeline,
    stage1_cluster,
    stage1_step,
    stage2_bridge,
    stage3_assign_backs,
)
from .thresholds import (
    collect_voice_negatives,
    filter_voice_tracks,
    learn_voice_threshold,
)

__version__ = "0.1.0"
