from .MixStrategies import MixOutcome, cutout, mixup, sample_cut_box, cutmix, saliencymix
from .Saliency import fine_grained_saliency
from .BatchMixer import augment_batch, describe_regime, MixedBatch
