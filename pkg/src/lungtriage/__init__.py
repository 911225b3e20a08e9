"""Lung-CT triage toolkit.

Classifies chest CT studies into COVID / Pneumonia / Normal, routes
COVID-predicted cases into a click-guided 3D U-Net lesion segmenter
(2-label and 4-label variants), and reports accuracy, train loss and
MeanDice +/- Std. Synthetic phantoms make the whole pipeline runnable
and testable at desk scale.
"""

from .classifier import (
    ClassifierConfig,
    ClassProbabilities,
    build_classifier,
    classify_slice,
    classify_volume,
)
from .labels import CLASS_LABELS, SEG2_LABELS, SEG4_LABELS
from .manifest import CaseRecord, DatasetManifest, load_manifest, save_manifest, split_dataset
from .metrics import (
    MetricsReport,
    classification_accuracy,
    dice,
    mean_dice_std,
    steps_total,
    voxel_accuracy,
)
from .overlay import export_overlay, render_overlay
from .phantom import PhantomSpec, generate_phantom, write_phantom_dataset
from .pipeline import TriageResult, triage_batch, triage_case
from .segmenter import (
    GuidanceClick,
    GuidanceMaps,
    SegmenterConfig,
    build_segmenter,
    make_guidance_maps,
    segment,
)
from .service import create_app
from .training import (
    Checkpoint,
    TrainConfig,
    TrainReport,
    cache_transformed,
    load_checkpoint,
    load_model,
    select_best_checkpoint,
    train,
)
from .transforms import (
    AugmentationPolicy,
    IntensityWindow,
    augment,
    extract_slices,
    normalize_intensity,
    prepare_classifier_input,
)
from .volume import SegmentationMask, SliceImage2D, Volume3D, load_mask, load_volume, save_mask, save_volume

__version__ = "0.1.0"
