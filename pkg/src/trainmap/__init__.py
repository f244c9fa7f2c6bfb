"""Seed-stability analysis of language-model pre-training runs.

Subpackages and modules:

- ``tensorstore``: binary checkpoint container and run manifests
- ``paramstats``: the 14 per-checkpoint parameter statistics
- ``hmm``: Gaussian-emission HMM (Baum-Welch, Viterbi, BIC selection)
- ``cartography``: standardization, training maps, forks, transition drivers
- ``stability``: outlier flagging, bag-of-states regression, zero-shot decoding
- ``agreement``: Cohen's kappa, self-consistency, accuracy, preference proportions
- ``probe``: MDL variational probing, subspace angles, trajectory correlations
- ``synthlab``: deterministic synthetic-data generators used as test oracles
- ``cli``: the ``trainmap`` command-line interface
"""

__version__ = "0.1.0"
