"""Progressive active learning for point-supervised small-target
segmentation on synthetic infrared-like scenes."""

from .core_types import (BinaryMask, GrayImage, Hyperparams, PointAnnotation,
                         PointKind, Pool, SampleRecord, SoftLabel, validate)
from .datagen import (DatasetConfig, GroundTruthStore, SceneSpec,
                      generate_dataset, generate_scene, load_dataset,
                      write_dataset)
from .dual_update import (CouDecision, adaptive_threshold, cou_evaluate,
                          extract_candidates, fiu_update)
from .epg import epg_classify, segment_patch, validate_components
from .loss import LossOutput, bce_loss, dice_loss, eedm_loss, focal_loss
from .metrics import evaluate, iou, niou, pd_fa, validity
from .model import AdamW, Predictor, TinySegNet
from .scheduler import (Phase, PhaseSchedule, RunReport, fires_cou, fires_fiu,
                        run_experiment, tm_at)

__version__ = "0.1.0"
