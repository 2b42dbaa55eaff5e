import numpy as np


CHANNEL_STREAM = 0
NOISE_STREAM = 1
DATA_STREAM = 2
CALIBRATION_STREAM = 3


def trial_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Splits one experiment seed into independent per-trial substreams.

    The generator for a given ``(seed, keys)`` pair is built from
    ``SeedSequence(seed, spawn_key=keys)``, so it depends only on its keys and
    never on how many other streams were drawn before it. Trials are therefore
    reproducible regardless of execution order or worker count. By convention
    ``keys`` is ``(trial_index, stream, ...)`` with ``stream`` one of the
    constants in this module.

    :param seed: Experiment seed.
    :type seed: int
    :param keys: Non-negative integers identifying the substream.
    :return: Independent generator for that substream.
    :rtype: np.random.Generator
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))
