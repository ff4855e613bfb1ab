"""Where loopy BP association marginals are exact and where they are not.

    python demos/lbp_accuracy.py

With a single track the association graph is a tree and BP returns the
exact marginals. With two tracks competing for two measurements the graph
has a loop; BP then converges to the Bethe fixed point, which can be
noticeably overconfident when both joint hypotheses are plausible and
clutter is unlikely.
"""

import numpy as np

from mpmmtt.association import AssociationWeights, enumerate_marginals, lbp_marginals

np.set_printoptions(precision=3, suppress=True)


def show(title, w):
    bp = lbp_marginals(w)
    ex = enumerate_marginals(w)
    print(title)
    print("  loopy BP (%d iterations):" % bp.iterations)
    print(bp.a_hat)
    print("  exact:")
    print(ex.a_hat)
    print("  max abs difference: %.2e\n" % np.abs(bp.a_hat - ex.a_hat).max())


# one track, three measurements
show("tree", AssociationWeights([np.log(0.1)], [np.log(0.9)],
                                [[-2.0, -3.5, -6.0]], np.full(3, -7.5)))

# two tracks, two measurements; the crossing hypothesis is about a quarter
# as likely as the straight one
show("two-by-two loop", AssociationWeights(np.log([0.1, 0.1]), np.log([0.9, 0.9]),
                                           [[-3.0, -3.7], [-3.7, -3.0]],
                                           np.full(2, -9.2)))

# the same loop with plenty of clutter probability is much better behaved
show("two-by-two loop, heavy clutter",
     AssociationWeights(np.log([0.1, 0.1]), np.log([0.9, 0.9]),
                        [[-3.0, -3.7], [-3.7, -3.0]], np.full(2, -2.0)))

rng = np.random.default_rng(0)
errs = []
for _ in range(500):
    n_t, n_e = rng.integers(1, 5, size=2)
    w = AssociationWeights(np.log(rng.uniform(size=n_t)), np.zeros(n_t),
                           np.log(rng.uniform(size=(n_t, n_e))),
                           np.log(rng.uniform(size=n_e)))
    errs.append(np.abs(lbp_marginals(w).a_hat - enumerate_marginals(w).a_hat).max())
errs = np.array(errs)
print("500 random problems up to 4x4 with uniform weights:")
print("  median error %.1e, 90%% %.1e, 99%% %.1e, max %.3f"
      % tuple(np.quantile(errs, [0.5, 0.9, 0.99, 1.0])))
