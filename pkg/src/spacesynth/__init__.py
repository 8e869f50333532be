"""spacesynth: tree-guided data-space partitioning and instruction synthesis.

The pipeline turns one task description into training data in two stages:
first a provider-driven build recursively splits the task's data space into a
tree of mutually exclusive, complementary subspaces; then every leaf subspace
contributes its own batch of instructions (optionally paired with answers),
the corpus is near-duplicate filtered, and its diversity is scored as the
mean pairwise cosine of instruction embeddings.
"""

from .errors import SpaceSynthError
from .gateway import Gateway, OpenAIHttpTransport, RetryPolicy
from .mock import ScriptedMockTransport, hash_bag_embed
from .partition import build_tree, resume_build
from .quality import (
    DiversityReport,
    SimilarityMatrixSpec,
    diversity_compare,
    filter_near_duplicates,
    mean_pairwise_cosine,
    rouge_l,
    tokenize,
)
from .synthesis import (
    Dataset,
    SampleRecord,
    generate_answers,
    load_dataset,
    subsample,
    synthesize_all,
    synthesize_leaf,
    temperature_baseline,
    write_dataset,
)
from .templates import TemplateSet
from .tree import (
    AttributeValue,
    DimensionSpec,
    PartitionConfig,
    SpaceTree,
    normalize_label,
)

__version__ = "0.1.0"

__all__ = [
    "SpaceSynthError",
    "Gateway",
    "OpenAIHttpTransport",
    "RetryPolicy",
    "ScriptedMockTransport",
    "hash_bag_embed",
    "build_tree",
    "resume_build",
    "DiversityReport",
    "SimilarityMatrixSpec",
    "diversity_compare",
    "filter_near_duplicates",
    "mean_pairwise_cosine",
    "rouge_l",
    "tokenize",
    "Dataset",
    "SampleRecord",
    "generate_answers",
    "load_dataset",
    "subsample",
    "synthesize_all",
    "synthesize_leaf",
    "temperature_baseline",
    "write_dataset",
    "TemplateSet",
    "AttributeValue",
    "DimensionSpec",
    "PartitionConfig",
    "SpaceTree",
    "normalize_label",
    "__version__",
]
