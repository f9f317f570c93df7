"""jdfd: joint deepfake detector.

A two-branch convolutional autoencoder whose shared encoder trains under a
supervised classification loss and an unsupervised reconstruction loss at the
same time, implemented from scratch (forward and backward passes included),
together with a synthetic-forgery data generator, an AUC evaluation harness,
ablation runners, a FastAPI service, and a CLI client.
"""

__version__ = "0.1.0"
