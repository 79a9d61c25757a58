from .evaluate import (
    DISTANCE_BUCKETS,
    EvalReport,
    effective_lengths,
    evaluate,
    frames_to_threshold,
    generalization_by_distance,
    heldout_split,
    select_heldout_targets,
)
from .pairs import (
    PairClassifier,
    PairFeatures,
    PairResult,
    PairSample,
    PairSets,
    PairSplit,
    Relation,
    candidate_pairs,
    generate_pairs,
    train_pair_classifier,
)
from .plots import episode_length_histogram, learning_curve_plot, length_histogram
from .report import category_table, diagnostic_table, distance_table, export_text, summary_table
