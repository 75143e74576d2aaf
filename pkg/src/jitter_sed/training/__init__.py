from .augment import AugmentationConfig, augment, filter_augment, frame_shift, frequency_distortion, mixup, time_mask
from .data import FeatureSet, SEDBatch, SEDBatcher, rasterize, weak_vector
from .losses import LossWeights, jitter_loss, mean_bce, normalized_rec_loss, rec_loss, sed_loss
from .optim import AdamW, cosine_lr
from .schedule import (
    STAGES,
    MetricsLog,
    TrainConfig,
    TrainState,
    check_order,
    encode_all,
    predict_all,
    probe_loss,
    run_stage,
)
from .teacher import ema_update
