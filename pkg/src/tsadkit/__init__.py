"""tsadkit: composable time-series anomaly detection.

Reusable primitives across preprocessing / modeling / postprocessing engines,
JSON-defined pipeline templates, segment-based evaluation, GP hyperparameter
tuning, a benchmarking harness, an embedded knowledge base, and an annotation
feedback loop.
"""

from .core import (
    Event,
    EventList,
    Signal,
    SyntheticSpec,
    AnomalySpec,
    generate_synthetic,
    load_events_csv,
    load_signal_csv,
    slice_signal,
    write_events_csv,
    write_signal_csv,
)
from .metrics import ConfusionWeights, Scores, overlapping_segment, score_from_confusion, weighted_segment
from .pipeline import (
    FittedPipeline,
    Pipeline,
    Template,
    bundled_template,
    detect,
    fit,
    hyperparameter_space,
    instantiate,
    load_template,
    load_template_file,
)

__version__ = "0.1.0"
