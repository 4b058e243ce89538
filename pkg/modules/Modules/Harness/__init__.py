from .Network import ArchConfig, ResNet, build_model, resolve_layer
from .Dataset import LabeledSet, load_datasets
from .Trainer import ModelCheckpoint, train
from .Oracle import ScoreOracle, score_oracle
from .Selection import EvalSample, select_eval_samples
