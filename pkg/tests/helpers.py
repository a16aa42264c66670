import numpy as np

from kdre import condlab
from kdre.kernelcore import KernelSpec, gram_blocks


def random_blocks(seed, n, m, d=3, sigma=1.5, mu=0.5):
    rng = np.random.default_rng(seed)
    x, y = condlab.gaussian_pair(rng, d, n, m, mu)
    return x, y, gram_blocks(KernelSpec(sigma), x, y)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
