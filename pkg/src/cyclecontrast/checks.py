"""Randomized gradient verification of the loss surfaces.

Used by the ``gradcheck`` CLI command and by the acceptance tests: each
objective (and the soft-nearest-neighbor composition feeding the cycle
objective) is checked against central finite differences at float64.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from . import tensor as T
from .rng import make_rng


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)


def random_instance(rng: np.random.Generator, n_max: int = 8, d_max: int = 16,
                    u_max: int = 32, r_max: int = 32):
    n = int(rng.integers(1, n_max + 1))
    d = int(rng.integers(2, d_max + 1))
    m = int(rng.integers(1, u_max + 1))
    r = int(rng.integers(0, r_max + 1))
    return {
        # queries are checked pre-normalization, as the encoder produces them
        "q_raw": rng.standard_normal((n, d)).astype(np.float32),
        "k": unit_rows(rng, n, d),
        "neighbors": unit_rows(rng, m, d),
        "remainder": unit_rows(rng, r, d),
    }


def gradcheck_losses(seed: int, trials: int, step: float = 3e-3) -> dict[str, float]:
    """Worst finite-difference relative error per objective over random
    small instances. All values should stay at or below 1e-4.

    Each checked function normalizes its raw query input first, exactly
    like the encoder's projection output, so the gradients flow through
    the same path training uses.
    """
    cfg = L.LossConfig()
    worst = {
        "intra_image": 0.0,
        "intra_video": 0.0,
        "cycle": 0.0,
        "combined": 0.0,
    }
    for trial in range(trials):
        rng = make_rng(seed, 0x474331, trial)
        inst = random_instance(rng)
        q = T.Tensor(inst["q_raw"], requires_grad=True)

        def f_image(qt):
            return L.intra_image_loss(T.l2_normalize(qt), inst["k"],
                                      inst["remainder"], cfg)

        def f_video(qt):
            return L.intra_video_loss(T.l2_normalize(qt), inst["k"],
                                      inst["remainder"], cfg)

        def f_cycle(qt):
            snn = L.soft_nearest_neighbor(T.l2_normalize(qt), inst["neighbors"], cfg)
            return L.cycle_loss(snn.q_hat, inst["k"], inst["remainder"], cfg)

        def f_combined(qt):
            qn = T.l2_normalize(qt)
            intra = L.intra_video_loss(qn, inst["k"], inst["remainder"], cfg)
            snn = L.soft_nearest_neighbor(qn, inst["neighbors"], cfg)
            cyc = L.cycle_loss(snn.q_hat, inst["k"], inst["remainder"], cfg)
            return L.combined_loss(intra, cyc, None, cfg)

        worst["intra_image"] = max(worst["intra_image"], T.gradcheck(f_image, [q], step))
        worst["intra_video"] = max(worst["intra_video"], T.gradcheck(f_video, [q], step))
        worst["cycle"] = max(worst["cycle"], T.gradcheck(f_cycle, [q], step))
        worst["combined"] = max(worst["combined"], T.gradcheck(f_combined, [q], step))
    return worst
