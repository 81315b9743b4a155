"""Context-decoupling copy-paste augmentation with a synthetic test bed.

The package mines object cutouts from weakly supervised mask
predictions, pastes them onto other training images online so objects
stop co-occurring with their usual backgrounds, and measures the effect
on CAM-derived segmentation masks with a small linear scorer.
"""

from .augmentor import (AugmentConfig, PairwiseBatch, RoundArtifact,
                        augment_sample, make_batch, run_rounds,
                        sample_disjoint_instance)
from .blender import (BlendConfig, PlacementRecord, paste, random_blend,
                      rescale_instance, rotate_instance, smooth_alpha)
from .config import config_from_dict, load_config
from .core import (LabelSet, ObjectInstance, Raster, RngStream, Sample,
                   crop, derive_seed, tight_bbox)
from .experiment import (ArmMetrics, ExperimentConfig, ExperimentReport,
                         apply_overrides, evaluate, run_experiment,
                         run_sweep, sweep_table)
from .harvester import (HarvestCriteria, HarvestDecision, InstanceBank,
                        extract_instance, harvest, qualifies)
from .synthgen import SynthConfig, gen_corpus, gen_scene
from .toycam import (FEATURE_DIM, FeatureMap, MiouResult, ModelConfig,
                     ToyModel, TrainReport, cam, cam_to_mask,
                     extract_features, forward, loss_and_grad, miou,
                     predict_mask, train)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ArmMetrics", "BlendConfig", "ExperimentConfig",
    "ExperimentReport", "FeatureMap", "FEATURE_DIM", "HarvestCriteria",
    "HarvestDecision", "InstanceBank", "LabelSet", "MiouResult",
    "ModelConfig", "ObjectInstance", "PairwiseBatch", "PlacementRecord",
    "Raster", "RngStream", "RoundArtifact", "Sample", "SynthConfig",
    "ToyModel", "TrainReport", "apply_overrides", "augment_sample", "cam",
    "cam_to_mask", "config_from_dict", "crop", "derive_seed", "evaluate",
    "extract_features", "extract_instance", "forward", "gen_corpus",
    "gen_scene", "harvest", "load_config", "loss_and_grad", "make_batch",
    "miou", "paste", "predict_mask", "qualifies", "random_blend",
    "rescale_instance", "rotate_instance", "run_experiment", "run_rounds",
    "run_sweep", "sample_disjoint_instance", "smooth_alpha", "sweep_table",
    "tight_bbox", "train",
]
