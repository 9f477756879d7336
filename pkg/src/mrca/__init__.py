"""Multiple-relations classification with imbalanced-prediction adaptation."""

from .embedding import EmbeddingStore, encode_sentence, load_embeddings
from .network import ModelParams, MRCAModel, NetworkShape, forward, backward, init_params
from .loss import LossConfig, batch_loss, dice_loss, rc_dice_loss
from .data import Dataset, LabeledExample, import_corpus
from .evaluation import EvalReport, micro_prf, aggregate_runs
from .train import TrainConfig, fit, multi_run

__version__ = "0.1.0"
