"""salfuse: fuse candidate saliency maps into one integrated map.

The pipeline works at superpixel level: images are over-segmented, candidate
maps are pooled, a reference map is built from boundary-prior knowledge and
candidate consensus, per-model expertise is estimated without ground truth,
and a synchronous logit-domain update iterates the stack to a fused result.
"""

from .config import FusionConfig
from .errors import ConfigError, EmptyGroundTruth, InputError, SalfuseError
from .expertise import (
    EmResult,
    ExpertiseVector,
    em_fit,
    estimate,
    log_weights,
    stats_alpha,
    stats_beta,
)
from .fusion import (
    CandidateStack,
    FusionResult,
    FusionState,
    average_baseline,
    ca_step,
    initial_state,
    logit_vote_update,
    run_fusion,
    update_reference,
)
from .knowledge import (
    AffinityGraph,
    KnowledgeBundle,
    boundary_knowledge,
    build_affinity,
    build_knowledge,
    consensus,
    load_external_map,
    majority_vote,
    propagate,
)
from .metrics import EvalReport, build_report, convergence_trace, f_measure, mae
from .pipeline import RunManifest, evaluate_dataset, fuse_image
from .preprocess import (
    LabImage,
    SuperpixelGrid,
    binarize,
    minmax_normalize,
    otsu_threshold,
    pool,
    slic_segment,
    to_lab,
    unpool,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "CandidateStack",
    "ConfigError",
    "EmResult",
    "EmptyGroundTruth",
    "EvalReport",
    "ExpertiseVector",
    "FusionConfig",
    "FusionResult",
    "FusionState",
    "InputError",
    "KnowledgeBundle",
    "LabImage",
    "RunManifest",
    "SalfuseError",
    "SuperpixelGrid",
    "average_baseline",
    "binarize",
    "boundary_knowledge",
    "build_affinity",
    "build_knowledge",
    "build_report",
    "ca_step",
    "consensus",
    "convergence_trace",
    "em_fit",
    "estimate",
    "evaluate_dataset",
    "f_measure",
    "fuse_image",
    "initial_state",
    "load_external_map",
    "log_weights",
    "logit_vote_update",
    "mae",
    "majority_vote",
    "minmax_normalize",
    "otsu_threshold",
    "pool",
    "propagate",
    "run_fusion",
    "slic_segment",
    "stats_alpha",
    "stats_beta",
    "to_lab",
    "unpool",
    "update_reference",
]
