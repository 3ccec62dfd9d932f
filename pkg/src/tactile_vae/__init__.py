"""Unsupervised tactile representations with variational autoencoders.

Submodules: ``nn`` (MLPs, backprop, optimizers), ``vae`` (model and training),
``sim`` (synthetic tactile sensors and datasets), ``evaluation`` (raw vs latent
comparisons), ``calibration`` (few-shot latent-to-physical mapping),
``control`` (pendulum balancing from latent rewards), ``storage`` and ``cli``.
"""

__version__ = "0.1.0"
