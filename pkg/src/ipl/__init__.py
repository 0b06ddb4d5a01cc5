"""Semantic token selection and soft-prompt optimization over cached embeddings.

The package trains interpretable prompts for a CLIP-style cosine-softmax
classifier: discrete vocabulary tokens are greedily selected under a
utility-minus-redundancy objective and frozen into the prompt, alternating
with gradient updates of the learnable context vectors.
"""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    IntegrityError,
    IplError,
    MissingFileError,
    NotFoundError,
    NumericError,
    SizeError,
    StateError,
)
from .estimator import InterpretablePromptClassifier
from .prompt import (
    DataSlice,
    PromptLayout,
    PromptState,
    build_layout,
    encode_prompt,
    fill_semantic_slot,
    grad_soft,
    init_state,
    load_prompt,
    save_prompt,
    sgd_step,
    training_loss,
)
from .scheduler import (
    Metrics,
    RunConfig,
    RunTrace,
    evaluate,
    harmonic_mean,
    run,
    trace_dict,
)
from .scorer import (
    FunctionEncoder,
    ObjectiveConfig,
    ObjectiveOracle,
    ScorerContext,
    Template,
    TemplateEncoder,
    cross_entropy,
    delta_redundancy,
    marginal_gain,
    marginal_gain_parts,
    objective,
    parse_template,
    redundancy,
    softmax_probs,
    utility,
)
from .selector import (
    FacilityLocationOracle,
    GainParts,
    ModularOracle,
    SelectedSet,
    SelectionStep,
    SetFunction,
    brute_force_best,
    epsilon_estimate,
    greedy_select,
    greedy_step,
    marginal_curve,
)
from .store import (
    Dataset,
    EmbeddingTable,
    Store,
    VocabMeta,
    link_store,
    load_manifest,
    read_matrix,
    read_vocab_tsv,
    save_store,
    stores_equal,
    write_matrix,
    write_vocab_tsv,
)
from .synth import SynthConfig, synth_generate
from .vocab import CandidatePool, FilterConfig, filter_candidates, is_alphabetic, pool_remove

__version__ = "0.1.0"
