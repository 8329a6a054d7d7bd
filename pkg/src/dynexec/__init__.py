"""Dynamic-execution inference optimizations on fully specified toy models.

Each technique preserves a brute-force-checkable invariant: speculative and
feature-level drafting preserve the target distribution exactly, lookahead is
bit-identical to greedy decoding, the entropy gate is monotone in its
threshold, the step recommender is monotone in difficulty, and routing
reports an exact cost/quality frontier.
"""

from .core import (
    CostMeter,
    FeatureModel,
    Rng,
    SequenceModel,
    TableModel,
    entropy,
    feature_forward,
    load_model,
    model_next,
    normalize,
    sample,
    sample_many,
    save_model,
    softmax,
)
from .eagle import (
    Extrapolator,
    eagle_decode,
    eagle_draft,
    fit_extrapolator,
    sample_corpus,
)
from .earlyexit import (
    MultiExitNet,
    Point2,
    gen_dataset,
    infer_with_exit,
    sweep,
    train_stages,
)
from .lookahead import NGramCache, cache_update, lookahead_decode, propose
from .router import RoutePolicy, RouteReport, WorkloadItem, difficulty, evaluate, route
from .specdec import (
    DecodeStats,
    DraftOutput,
    VerificationResult,
    acceptance_rate_memoryless,
    draft,
    expected_tokens_per_cycle,
    residual,
    simulated_speedup,
    speculative_decode,
    verify,
)
from .stepsaver import (
    MixtureSpec,
    NoiseSchedule,
    QualityReport,
    StepRecommender,
    adaptive_generate,
    fit_recommender,
    generate,
    min_steps_oracle,
    quality,
    wasserstein1,
)

__version__ = "0.1.0"
