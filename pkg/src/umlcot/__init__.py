"""Structured chain-of-thought plan scoring: PlantUML parsing, format and
accuracy rewards, GRPO advantages, and similarity/P/R/F1 reports."""

__version__ = "0.1.0"

from .embed import EmbedderConfig, EmbeddingVector, cosine, embed_batch
from .exceptions import (
    DimensionMismatch,
    DuplicateId,
    EmptyCorpus,
    GroupTooSmall,
    InputError,
    InvalidReference,
    MalformedLine,
    MissingMarkers,
    ParseError,
    ServiceMalformedResponse,
    ServiceUnreachable,
    UnbalancedBraces,
    UnterminatedNode,
)
from .grpo import (
    CandidateGroup,
    ToyPolicy,
    normalize_advantages,
    policy_loss,
    run_simulation,
    select_candidate,
    sim_step,
)
from .metrics import CorpusReport, InstanceMetrics, aggregate, instance_metrics
from .reward import (
    MatchTrace,
    PartitionMatch,
    RewardBreakdown,
    accuracy_reward_text,
    accuracy_reward_uml,
    canonical_partition,
    greedy_match,
    total_reward,
)
from .tagged import TaggedOutput, extract, format_reward
from .uml import (
    ActivityDiagram,
    ClassDiagram,
    check_markers,
    parse_activity,
    parse_class,
    render_activity,
    render_class,
)
