"""Independent reference implementations shared by the test modules."""

import numpy as np

from tactile_filter.geometry import Pose2D, SensorWindow, hole_rasterize, rasterize
from tactile_filter.similarity import SimilarityModel

W = SensorWindow()


class FixedScores(SimilarityModel):
    """Hole-peg score looked up by bank row, ignoring the hole image."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def hp_scores(self, hole, bank, idx=None):
        idx = np.arange(bank.n_entries) if idx is None else np.asarray(idx)
        return self.scores[idx]


def exhaustive_class_posteriors(bank, oracle, truth_cat, truth_pose, actions):
    """Bayes over every (category, grid pose) trajectory, scored by direct rasterisation."""
    shapes = [bank.shapes[c] for c in bank.categories]
    hyps = [(c, p) for c in range(len(shapes)) for p in bank.grid.poses()]
    g = bank.grid
    truth_shape = bank.shapes[truth_cat]

    def on_grid(p):
        return (
            g.x_values[0] - 2 <= p.x <= g.x_values[-1] + 2
            and g.y_values[0] - 2 <= p.y <= g.y_values[-1] + 2
            and g.theta_values[0] - 15 <= p.theta <= g.theta_values[-1] + 15
        )

    def scores(hole, poses):
        out = []
        for (c, _), p in zip(hyps, poses):
            peg = rasterize(shapes[c], p, W) if on_grid(p) else np.zeros(W.shape)
            out.append(oracle.score_hp(hole, peg))
        return np.array(out)

    poses = [p for _, p in hyps]
    tp = truth_pose
    post = scores(hole_rasterize(truth_shape, tp, W), poses)
    post /= post.sum()
    history = []
    for a in actions:
        poses = [Pose2D(p.x + a.dx, p.y + a.dy, p.theta + a.dtheta) for p in poses]
        tp = Pose2D(tp.x + a.dx, tp.y + a.dy, tp.theta + a.dtheta)
        post = post * scores(hole_rasterize(truth_shape, tp, W), poses)
        post /= post.sum()
        marg = np.zeros(len(shapes))
        for (c, _), w in zip(hyps, post):
            marg[c] += w
        history.append(marg)
    return history
