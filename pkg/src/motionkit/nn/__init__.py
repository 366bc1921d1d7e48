"""Layers, losses and optimiser for the motion classifier and the synthesis
autoencoders. Tensors and autodiff come from PyTorch."""

from .autoencoder import EMBED_DIM, AutoEncoder, Decoder, Encoder, build_autoencoder
from .blocks import RepBlock, fuse_block, rep_block_forward
from .init import init_module, make_generator
from .losses import cross_entropy, mse, softmax_cross_entropy
from .models import Classifier, MotionNet, build_motion_net, classifier_forward, dropout
from .optim import Adam, AdamState, adam_step

__all__ = [
    "EMBED_DIM", "AutoEncoder", "Decoder", "Encoder", "build_autoencoder",
    "RepBlock", "fuse_block", "rep_block_forward",
    "init_module", "make_generator",
    "cross_entropy", "mse", "softmax_cross_entropy",
    "Classifier", "MotionNet", "build_motion_net", "classifier_forward", "dropout",
    "Adam", "AdamState", "adam_step",
]
