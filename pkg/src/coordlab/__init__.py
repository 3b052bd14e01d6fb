"""coordlab: a zero-shot human-AI coordination laboratory.

Simulate a two-cook kitchen game, build partner populations, learn a
trajectory-VAE over partner behavior, train Cooperators against latent-sampled
generative partners, adapt the sampling to small human datasets, evaluate with
proxy agents, and host live browser play.
"""

__version__ = "0.1.0"
