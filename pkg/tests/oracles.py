"""Brute-force reference computations shared by the tests."""
import numpy as np


def grid_logistic_max(x, y, box):
    # exhaustive 0.01 grid, then a 1e-4 grid around the best point
    def loglik(b0, b1):
        lin = b0[..., None] + b1[..., None] * x
        return np.sum(y * lin - np.logaddexp(0.0, lin), axis=-1)

    g = np.arange(box[0], box[1] + 1e-9, 0.01)
    b0, b1 = np.meshgrid(g, g, indexing="ij")
    ll = np.concatenate([loglik(b0[i:i + 100], b1[i:i + 100]) for i in range(0, g.size, 100)])
    i, j = np.unravel_index(np.argmax(ll), ll.shape)
    fine0 = np.arange(g[i] - 0.02, g[i] + 0.02, 1e-4)
    fine1 = np.arange(g[j] - 0.02, g[j] + 0.02, 1e-4)
    f0, f1 = np.meshgrid(fine0, fine1, indexing="ij")
    ll = loglik(f0, f1)
    i, j = np.unravel_index(np.argmax(ll), ll.shape)
    return np.array([fine0[i], fine1[j]])


def binary_population(dgp):
    """All 32 observable (C1, C2, Z, A, Y) configurations of the binary design
    with their exact probabilities.

    Returns (cols, prob, p_untreated) where ``cols`` maps a, y, z, c1, c2 to
    arrays and ``p_untreated`` is Pr(Y=1 | A=0, Z, C) per configuration.
    """
    from scipy.special import expit

    def lin(coef, c1, c2):
        return coef[0] + coef[1] * c1 + coef[2] * c2

    rows, prob, p_u = [], [], []
    for c1 in (0.0, 1.0):
        for c2 in (0.0, 1.0):
            pc = (dgp.p_c1 if c1 else 1 - dgp.p_c1) * (dgp.p_c2 if c2 else 1 - dgp.p_c2)
            pz1 = expit(lin(dgp.z_coef, c1, c2))
            py0 = expit(lin(dgp.y0_coef, c1, c2))
            py1 = expit(lin(dgp.y1_coef, c1, c2))
            for z in (0.0, 1.0):
                base = pc * (pz1 if z else 1 - pz1)
                pi1 = expit(dgp.treatment_logit(1.0, z, c1, c2))
                pi0 = expit(dgp.treatment_logit(0.0, z, c1, c2))
                pa0 = py0 * (1 - pi1) + (1 - py0) * (1 - pi0)
                pu = py0 * (1 - pi1) / pa0
                for y in (0.0, 1.0):
                    rows.append((0.0, y, z, c1, c2))
                    prob.append(base * (py0 * (1 - pi1) if y else (1 - py0) * (1 - pi0)))
                    p_u.append(pu)
                    rows.append((1.0, y, z, c1, c2))
                    prob.append(base * (1 - pa0) * (py1 if y else 1 - py1))
                    p_u.append(pu)
    rows = np.array(rows)
    cols = dict(zip(("a", "y", "z", "c1", "c2"), rows.T))
    return cols, np.array(prob), np.array(p_u)
