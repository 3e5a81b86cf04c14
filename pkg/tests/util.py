import numpy as np

from samoyeds import SparseFormatConfig, encode_weight, prune_to_format

TABLE_CONFIGS = [(1, 2, 16), (1, 2, 32), (4, 8, 32), (8, 16, 32)]


def random_weight(rng, rows, cols, cfg, integer=False):
    """Pruned dense weight and its encoding."""
    if integer:
        w = rng.integers(-3, 4, size=(rows, cols)).astype(np.float32)
    else:
        w = rng.standard_normal((rows, cols)).astype(np.float32)
    pruned, _ = prune_to_format(w, cfg)
    return pruned, encode_weight(pruned, cfg)


def random_config(rng):
    return SparseFormatConfig(*TABLE_CONFIGS[int(rng.integers(len(TABLE_CONFIGS)))])


def random_selection(rng, total, fraction):
    count = max(0, min(total, round(fraction * total)))
    return np.sort(rng.choice(total, size=count, replace=False))
