"""The bundled synthetic cross-domain task: a 10-class 8x8 source, a 2-class 4x4 target.

Everything is seeded and generated locally, so runs need no downloads.
"""

from functools import lru_cache

from .data import make_source_task, make_target_task
from .model_core import SourceTrainConfig, dense, relu, train_source
from .reprogram import ReprogramConfig

SOURCE_SEED = 0
SOURCE_ARCH = ((64, 128), (128, 10))
SOURCE_TRAIN = SourceTrainConfig(epochs=10, batch_size=32, learning_rate=0.05, momentum=0.9, seed=SOURCE_SEED)

# Raw-score MSE pulls the mapped source probabilities toward one-hot, which is
# what moves target logits onto the source logit clouds.
WHITE_BOX = ReprogramConfig(epochs=100, batch_size=32, lr_W=0.05, lr_head=0.01, momentum=0.9,
                            output_map="greedy", m=1, loss="mse")
BLACK_BOX = ReprogramConfig(epochs=100, batch_size=32, lr_W=0.05, lr_head=0.01, momentum=0.9,
                            output_map="greedy", m=1, loss="mse", mode="black_box", q=20, mu=0.01)


def source_arch():
    (i0, o0), (i1, o1) = SOURCE_ARCH
    return [dense(i0, o0), relu(), dense(i1, o1)]


@lru_cache(maxsize=None)
def source_data():
    """(train, heldout) splits of the source task."""
    return make_source_task(n_train=2000, n_test=1000, seed=SOURCE_SEED)


@lru_cache(maxsize=None)
def source_model():
    return train_source(source_data()[0], source_arch(), SOURCE_TRAIN)


def target_data(seed: int = 1):
    """(train, test) with 200 training samples; ``seed`` draws a fresh sample of the task."""
    return make_target_task(n_train=200, n_test=400, seed=seed)
