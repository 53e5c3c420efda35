"""
refrec - Recurrent referring-expression segmentation

A small numpy reverse-mode autodiff engine, a convolutional encoder, a
ConvLSTM decoder conditioned on phrase embeddings, soft-IoU supervision
with a Hungarian-matched language-free baseline, and a synthetic shapes
benchmark to train and evaluate on.
"""

__version__ = "0.1.0"


# Lazy imports so the CLI starts without pulling in the whole model stack
def __getattr__(name):
    if name in ('train', 'evaluate', 'predict', 'load_model', 'order_consistency', 'sweep'):
        from . import trainer
        return getattr(trainer, name)
    if name == 'TrainConfig':
        from .config import TrainConfig
        return TrainConfig
    if name == 'Tensor':
        from .tensor import Tensor
        return Tensor
    raise AttributeError(f"module '{__name__}' has no attribute '{name}'")


__all__ = ['train', 'evaluate', 'predict', 'load_model', 'order_consistency', 'sweep', 'TrainConfig', 'Tensor']
