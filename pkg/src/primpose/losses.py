"""Reconstruction, latent, adversarial and keypoint losses with analytic
gradients with respect to the prediction.

Top-K selections rank by the quantity being summed, breaking ties by ascending
flat pixel index. Gradients are taken at a fixed selection.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_array_shape, check_image, check_same_shape
from .exceptions import InvalidInputError

DEFAULT_TOPK = 128
DEFAULT_ALPHA = 5.0
DEGENERATE_TOTAL = 1e-12
PROB_EPS = 1e-7


@dataclass
class LossValue:
    """A scalar loss and its gradient.

    ``grad`` has the prediction's shape, or is a tuple of arrays when the loss
    takes several inputs (e.g. ``(d_mu, d_log_var)``).
    """

    value: float
    grad: object


@dataclass
class LatentStats:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = check_array_shape(self.mu, (None,), "mu")
        self.log_var = check_array_shape(self.log_var, (self.mu.shape[0],), "log_var")


def topk_indices(q, k):
    """Sorted indices of the ``k`` largest entries of 1-D ``q``.

    Entries tied with the k-th largest value are taken in ascending index order.
    """
    n = q.shape[0]
    if k >= n:
        return np.arange(n)
    kth = np.partition(q, n - k)[n - k]
    above = np.flatnonzero(q > kth)
    tied = np.flatnonzero(q == kth)[: k - above.size]
    return np.sort(np.concatenate([above, tied]))


def _pixels(img):
    """View an image as (n_pixels, n_channels)."""
    if img.ndim == 3:
        return img.reshape(-1, img.shape[2])
    return img.reshape(-1, 1)


def _check_k(k, n):
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= n):
        raise InvalidInputError(f"K must be an integer in [1, {n}], got {k!r}")


def loss_object_topk(x, x_hat, K=DEFAULT_TOPK):
    """Mean of the ``K`` largest per-pixel squared errors.

    A pixel's error sums the squared differences over its channels. Images of
    shape H x W x C have C channels; any other shape is read as one channel
    per element.
    """
    return _object_topk(x, x_hat, K)[0]


def _object_topk(x, x_hat, K):
    x = check_image(x, "target")
    x_hat = check_image(x_hat, "prediction")
    check_same_shape(x, x_hat)
    diff = _pixels(x_hat) - _pixels(x)
    _check_k(K, diff.shape[0])
    err = (diff ** 2).sum(axis=1)
    sel = topk_indices(err, K)
    grad = np.zeros_like(diff)
    grad[sel] = 2.0 * diff[sel] / K
    return LossValue(float(err[sel].sum() / K), grad.reshape(x_hat.shape)), sel


def loss_primitive(x, x_hat, alpha=DEFAULT_ALPHA, K=DEFAULT_TOPK):
    """Color-weighted axis-alignment loss for primitive images.

    Per channel ``c`` with ``d = x_c - x_hat_c``::

        S_c = mean of top-K of exp(alpha |d|) d^2
        C_c = mean of top-K of d^2
        L   = sum_c S_c exp(C_c / sum_k C_k)

    When ``sum_k C_k < 1e-12`` the weights fall back to 1 (the exponent is
    0/0 at a perfect reconstruction).
    """
    return _primitive(x, x_hat, alpha, K)[0]


def _primitive(x, x_hat, alpha, K):
    x = check_image(x, "target")
    x_hat = check_image(x_hat, "prediction")
    check_same_shape(x, x_hat)
    if not alpha > 0:
        raise InvalidInputError(f"alpha must be positive, got {alpha}")
    d = _pixels(x) - _pixels(x_hat)
    n, nc = d.shape
    _check_k(K, n)

    S = np.empty(nc)
    C = np.empty(nc)
    dS = np.zeros_like(d)  # dS_c / dd
    dC = np.zeros_like(d)
    selections = []
    for c in range(nc):
        dc = d[:, c]
        ad = np.abs(dc)
        e = np.exp(alpha * ad)
        s_sel = topk_indices(e * dc ** 2, K)
        c_sel = topk_indices(dc ** 2, K)
        selections += [s_sel, c_sel]
        S[c] = (e[s_sel] * dc[s_sel] ** 2).sum() / K
        C[c] = (dc[c_sel] ** 2).sum() / K
        # d/dd [exp(a|d|) d^2] = exp(a|d|) d (a|d| + 2)
        dS[s_sel, c] = e[s_sel] * dc[s_sel] * (alpha * ad[s_sel] + 2.0) / K
        dC[c_sel, c] = 2.0 * dc[c_sel] / K

    total = C.sum()
    if total < DEGENERATE_TOTAL:
        value = S.sum()
        g_d = dS
    else:
        w = np.exp(C / total)
        value = float((S * w).sum())
        # dL/dC_j = S_j w_j / total - sum_c S_c w_c C_c / total^2
        dL_dC = S * w / total - (S * w * C).sum() / total ** 2
        g_d = dS * w[None, :] + dC * dL_dC[None, :]
    # d = x - x_hat
    return LossValue(float(value), (-g_d).reshape(x_hat.shape)), selections


def kl_divergence(stats):
    """KL divergence of ``N(mu, diag(exp(log_var)))`` from ``N(0, I)``.

    ``grad`` is ``(d/dmu, d/dlog_var)``.
    """
    mu, lv = stats.mu, stats.log_var
    ev = np.exp(lv)
    value = 0.5 * float(np.sum(mu ** 2 + ev - 1.0 - lv))
    return LossValue(value, (mu.copy(), 0.5 * (ev - 1.0)))


def loss_vae_total(obj, prim, kl):
    """Sum of object, primitive and KL loss values."""
    return float(obj.value + prim.value + kl.value)


def _check_probs(p, name):
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if p.size == 0 or np.any(~((p > 0) & (p < 1))):
        raise InvalidInputError(f"{name}: probabilities must lie strictly inside (0, 1)")
    return p


def clamp_probabilities(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def loss_adversarial(d_real, d_fake):
    """Binary cross-entropy GAN objectives from discriminator outputs.

    Returns ``(L_D, L_G)`` where ``L_D = -mean(log d_real) - mean(log(1 - d_fake))``
    and ``L_G = -mean(log d_fake)`` (non-saturating). Both gradients are
    ``(d/dd_real, d/dd_fake)`` tuples.
    """
    dr = _check_probs(d_real, "d_real")
    df = _check_probs(d_fake, "d_fake")
    nr, nf = dr.size, df.size
    l_d = -np.log(dr).mean() - np.log1p(-df).mean()
    l_g = -np.log(df).mean()
    g_d = (-1.0 / (nr * dr), 1.0 / (nf * (1.0 - df)))
    g_g = (np.zeros_like(dr), -1.0 / (nf * df))
    return LossValue(float(l_d), g_d), LossValue(float(l_g), g_g)


def loss_keypoint(pred, target):
    """Sum of squared keypoint distances; ``grad = 2 (pred - target)``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(target, pred)
    diff = pred - target
    return LossValue(float((diff ** 2).sum()), 2.0 * diff)
