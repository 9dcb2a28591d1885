def select_best(epoch_evals):
    """Pick the checkpoint with the lowest dev error from ``[(checkpoint, dev_cer), ...]``.

    The earliest epoch wins ties.
    """
    if not epoch_evals:
        raise ValueError("no epochs to select from")
    best = min(range(len(epoch_evals)), key=lambda i: (epoch_evals[i][1], i))
    return epoch_evals[best][0]


def best_index(dev_cers):
    return min(range(len(dev_cers)), key=lambda i: (dev_cers[i], i))
