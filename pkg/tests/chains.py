"""Linear-Gaussian chain on SE(2) translations and an independent batch oracle.

With a translation-only prior, translation-only steps and noise, and the
heading fixed at zero, the smoothing problem is an ordinary linear
least-squares problem in the positions.
"""

import numpy as np

from invsmooth import lie, models, smoother
from invsmooth.dynamics import GroupAffineStep
from invsmooth.lie import GroupElement, GroupId


def linear_chain(rng, n_steps, q=0.04, r=0.25, p0=1.0, meas_prob=0.8):
    x0 = rng.standard_normal(2)
    prior = smoother.DegeneratePrior(models.se2(0.0, x0), np.eye(3)[:, :2], p0 * np.eye(2))
    e = GroupElement.identity(GroupId.SE2)
    qcov = np.diag([q, q, 0.0])
    moves = rng.standard_normal((n_steps, 2))
    steps = [GroupAffineStep(e, lie.Identity(), models.se2(0.0, u), qcov, 1.0) for u in moves]
    truth = [x0 + np.sqrt(p0) * rng.standard_normal(2)]
    for u in moves:
        truth.append(truth[-1] + u + np.sqrt(q) * rng.standard_normal(2))
    fixes = {}
    for i in range(n_steps + 1):
        if i > 0 and rng.random() < meas_prob:
            fixes[i] = truth[i] + np.sqrt(r) * rng.standard_normal(2)
    return dict(x0=x0, moves=moves, fixes=fixes, q=q, r=r, p0=p0, prior=prior, steps=steps)


def factors(chain, index, offset=0):
    return [models.gps_factor(index - offset, GroupId.SE2, chain["fixes"][index], chain["r"] * np.eye(2))] \
        if index in chain["fixes"] else []


def batch_positions(chain):
    """Whitened dense least squares over all positions."""
    n1 = len(chain["moves"]) + 1
    rows, rhs = [], []

    def add(coeffs, target, var):
        row = np.zeros((2, 2 * n1))
        for i, c in coeffs:
            row[:, 2 * i:2 * i + 2] = c * np.eye(2)
        rows.append(row / np.sqrt(var))
        rhs.append(np.asarray(target) / np.sqrt(var))

    add([(0, 1.0)], chain["x0"], chain["p0"])
    for i, u in enumerate(chain["moves"]):
        add([(i + 1, 1.0), (i, -1.0)], u, chain["q"])
    for i, y in chain["fixes"].items():
        add([(i, 1.0)], y, chain["r"])
    sol, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return sol.reshape(n1, 2)


def sliding_window_positions(chain, window):
    sw = smoother.SlidingWindowSmoother(chain["prior"], window=window, max_iters=1)
    for i, s in enumerate(chain["steps"], start=1):
        sw.push(s, factors(chain, i))
    first = len(chain["steps"]) + 1 - len(sw.states)
    return first, np.array([x.translation for x in sw.states]), sw
