"""deed: error-driven adaptation for code-generation models.

The loop: sample candidate programs, keep the confident failures, have the
model revise them against their own test evidence, fine-tune on the
accumulated revisions, and repeat until revisions stop arriving.
"""

from .collector import ErrorRecord, collect_errors
from .config import RunConfig
from .corpus import (
    Origin,
    Problem,
    ProblemSet,
    SplitManifest,
    TestCase,
    TrainPair,
    emit_training_file,
    load_problems,
    load_training_file,
    split_revise_seed,
    split_train_test,
)
from .errors import (
    ConfigError,
    CorpusError,
    DeedError,
    GatewayError,
    MockScriptError,
    SandboxError,
    StateError,
    TrainerError,
)
from .evaluator import EvalReport, evaluate_model, pass_at_any, pass_at_k
from .gateway import (
    Candidate,
    GenerationRequest,
    HttpCompletionsBackend,
    MockBackend,
    avg_logprob,
    candidate_score,
)
from .pipeline import Pipeline, PipelineState
from .reviser import (
    RevisionPrompt,
    RevisionRecord,
    build_fsp_prompt,
    build_revision_prompt,
    build_revise_training_set,
    collect_revisions,
    levenshtein,
    normalize_code,
)
from .sandbox import ExecutionOutcome, Sandbox, SandboxConfig, test_eval
from .trainer import (
    HyperParams,
    ReplayBuffer,
    TrainerJob,
    TrainerResult,
    assemble_replay,
    launch_training,
)

__version__ = "0.1.0"
