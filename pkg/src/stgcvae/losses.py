"""Training objective: bivariate Gaussian NLL + annealed KL divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, ParameterError
from .model import (BivariateGaussianSeq, LatentGaussian, LOGVAR_MAX,
                    RHO_R_MAX, SIGMA_S_MIN)

RHO_FLOOR = 1e-9  # lower bound on 1 - rho^2

ANNEAL_SLOPE = 2e-5      # KL weight gained per epoch
ANNEAL_CAP_EPOCHS = 250  # epoch at which the weight stops growing


@dataclass
class LossReport:
    """Loss components for one window; total = rec + weight * kl exactly."""
    total: float
    rec: float
    kl: float
    weight: float
    epoch: int
    total_value: ad.Value = None  # traced node, for backward


def bivariate_nll(pred: BivariateGaussianSeq, target: np.ndarray,
                  frames: slice = slice(None)) -> ad.Value:
    """Mean negative log-likelihood of target displacements under the
    predicted per-(agent, frame) bivariate Gaussians.

    pred.raw: (5, T, N) raw channels (mu_x, mu_y, s_x, s_y, r); target:
    (2, T, N). sigma = exp(s) with s clamped, rho = tanh(r), and 1 - rho^2
    is floored at 1e-9 before the log and the division.
    """
    raw = pred.raw
    target = np.asarray(target, dtype=np.float64)
    if raw.data.shape[1:] != target.shape[1:] or target.shape[0] != 2:
        raise DimensionError(
            f"bivariate_nll: pred {raw.data.shape} vs target {target.shape}")

    t_total = raw.data.shape[1]
    start, stop, _ = frames.indices(t_total)
    sl = lambda v: ad.slice_time(v, start, stop)

    mu_x, mu_y = sl(_channel(raw, 0)), sl(_channel(raw, 1))
    s_x = ad.clamp(sl(_channel(raw, 2)), SIGMA_S_MIN, LOGVAR_MAX)
    s_y = ad.clamp(sl(_channel(raw, 3)), SIGMA_S_MIN, LOGVAR_MAX)
    rho = ad.tanh(ad.clamp(sl(_channel(raw, 4)), -RHO_R_MAX, RHO_R_MAX))

    tx = ad.Value(target[0:1, start:stop, :])
    ty = ad.Value(target[1:2, start:stop, :])

    inv_sx = ad.exp(ad.neg(s_x))
    inv_sy = ad.exp(ad.neg(s_y))
    dx = ad.mul(ad.sub(tx, mu_x), inv_sx)
    dy = ad.mul(ad.sub(ty, mu_y), inv_sy)

    one_m_r2 = ad.clamp(ad.sub(ad.Value(np.ones_like(rho.data)),
                               ad.mul(rho, rho)), lo=RHO_FLOOR)
    quad = ad.add(ad.sub(ad.add(ad.mul(dx, dx), ad.mul(dy, dy)),
                         ad.scale(ad.mul(rho, ad.mul(dx, dy)), 2.0)),
                  ad.Value(np.zeros_like(rho.data)))
    nll = ad.add(
        ad.add(ad.add(s_x, s_y), ad.scale(ad.log(one_m_r2), 0.5)),
        ad.mul(quad, ad.scale(ad.reciprocal(one_m_r2), 0.5)))
    nll = ad.add(nll, ad.Value(np.full_like(rho.data, math.log(2 * math.pi))))
    return ad.mean_all(nll)


def _channel(x: ad.Value, i: int) -> ad.Value:
    # keep the channel axis so elementwise shapes line up: (1, T, N)
    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[i:i + 1] = g
        return (gx,)
    return ad.Value(x.data[i:i + 1], (x,), vjp)


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> ad.Value:
    """KL(q || p) for diagonal Gaussians, summed over latent channels and
    time, then averaged over agents."""
    if q.mu.data.shape != p.mu.data.shape:
        raise DimensionError(
            f"kl_diag_gaussians: q {q.mu.data.shape} vs p {p.mu.data.shape}")
    n_agents = q.mu.data.shape[-1]
    var_ratio = ad.exp(ad.sub(q.logvar, p.logvar))
    dmu = ad.sub(q.mu, p.mu)
    mahal = ad.mul(ad.mul(dmu, dmu), ad.exp(ad.neg(p.logvar)))
    per_elem = ad.scale(
        ad.sub(ad.add(ad.sub(p.logvar, q.logvar), ad.add(var_ratio, mahal)),
               ad.Value(np.ones_like(q.mu.data))), 0.5)
    return ad.scale(ad.sum_all(per_elem), 1.0 / n_agents)


def anneal_weight(epoch: int, slope: float = ANNEAL_SLOPE,
                  cap_epochs: int = ANNEAL_CAP_EPOCHS) -> float:
    """Linear KL annealing: slope * epoch, capped at slope * cap_epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return slope * min(epoch, cap_epochs)


def total_loss(pred: BivariateGaussianSeq, target: np.ndarray,
               q: LatentGaussian, p: LatentGaussian, epoch: int,
               slope: float = ANNEAL_SLOPE,
               cap_epochs: int = ANNEAL_CAP_EPOCHS) -> LossReport:
    """Combined loss over all output frames: rec + w_kl(epoch) * kl."""
    rec = bivariate_nll(pred, target)
    kl = kl_diag_gaussians(q, p)
    w = anneal_weight(epoch, slope, cap_epochs)
    total = ad.add(rec, ad.scale(kl, w))
    return LossReport(total=float(total.data), rec=float(rec.data),
                      kl=float(kl.data), weight=w, epoch=epoch,
                      total_value=total)


class MetricsLog:
    """Plain-text CSV loss log: epoch,step,total,rec,kl,w_kl."""

    HEADER = "epoch,step,total,rec,kl,w_kl"

    def __init__(self, path):
        self.path = path
        with open(path, "w") as fh:
            fh.write(self.HEADER + "\n")

    def append(self, epoch: int, step: int, report: LossReport):
        with open(self.path, "a") as fh:
            fh.write(f"{epoch},{step},{report.total!r},{report.rec!r},"
                     f"{report.kl!r},{report.weight!r}\n")
