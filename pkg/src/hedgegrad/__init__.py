"""Gradient-hedged relevance attribution for small convolutional networks."""

from hedgegrad.errors import (
    HedgegradError,
    ValidationError,
    ShapeError,
    ManifestError,
    MaskValueError,
    StorageError,
    NumericError,
    NonFiniteError,
    DegenerateMapError,
    SectionDegenerateError,
    DeadLayerError,
    PoolIndicesError,
    TrainingError,
)
from hedgegrad.layers import (
    LAYER_KINDS,
    REDISTRIBUTABLE_KINDS,
    LayerSpec,
    PoolArgmax,
    WeightTransform,
    backward_gradient,
    backward_weight_gradient,
    forward_layer,
    forward_layer_aux,
    redistribute_relevance,
    redistribute_to_mask,
)
from hedgegrad.model import (
    ModelGraph,
    fold_batchnorm,
    forward_model,
    load_model,
    model_weights_digest,
    normalize_input,
    randomize_layers,
    save_model,
)
from hedgegrad.attribution import (
    BASELINE_METHODS,
    ActivationTrace,
    AttributionResult,
    HedgeConfig,
    RelevanceMap,
    SectionPair,
    attribute,
    attribute_baseline,
    baseline_relevance_chain,
    forward_with_trace,
    hedge_layer,
    initial_contribution_map,
    modulate_sections,
    save_attribution,
    target_gradients,
    zbeta_input_rule,
)
from hedgegrad.data import (
    SHAPE_CLASSES,
    AnnotatedSample,
    decode_image,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from hedgegrad.train import PRESETS, build_preset, model_accuracy, train_toy_model
from hedgegrad.metrics import (
    SanityResult,
    expected_random_hit_rate,
    morf_insertion_curve,
    outside_inside_ratio,
    pearson,
    pointing_game,
    positive_ratio,
    sanity_check,
)
from hedgegrad.benchmark import (
    ABLATION_ROWS,
    BenchmarkConfig,
    EvalRecord,
    ablation_maps,
    format_table,
    run_benchmark,
    write_results,
)
from hedgegrad.render import heatmap_rgb, render_heatmap

__version__ = "0.1.0"
