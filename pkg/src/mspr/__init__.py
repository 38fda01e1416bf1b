"""Multi-scale predictive representations for offline goal-conditioned RL.

A desk-scale stack: a tiny autodiff/MLP substrate (`ndmath`), deterministic
toy environments (`gcenv`), scripted-expert dataset generation (`datagen`),
hindsight-relabeled batch samplers (`sampler`), the multi-scale
representation learner (`representation`), a decoupled actor-critic and
training loop (`agent`), evaluation/diagnostics (`evalkit`), and a CLI.
"""

__version__ = "0.1.0"
