from pdvox.data.batching import (
    AgeStats,
    Batch,
    SampleSet,
    batch_iter,
    fit_age_stats,
    iter_batches,
    load_samples,
)
from pdvox.data.manifest import (
    describe_demographics,
    format_demographics,
    load_manifest,
    save_manifest,
)
from pdvox.data.split import (
    augment,
    augment_split,
    load_split,
    save_split,
    stratified_split,
)
from pdvox.data.synth import SynthSpec, lesion_box, synth_generate
from pdvox.data.volume import (
    Volume,
    hemisphere_flip,
    load_volume,
    normalize_intensity,
    save_volume,
)

__all__ = [
    "AgeStats",
    "Batch",
    "SampleSet",
    "batch_iter",
    "fit_age_stats",
    "iter_batches",
    "load_samples",
    "describe_demographics",
    "format_demographics",
    "load_manifest",
    "save_manifest",
    "augment",
    "augment_split",
    "load_split",
    "save_split",
    "stratified_split",
    "SynthSpec",
    "lesion_box",
    "synth_generate",
    "Volume",
    "hemisphere_flip",
    "load_volume",
    "normalize_intensity",
    "save_volume",
]
