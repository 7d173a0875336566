"""Two-covariance PLDA.

Generative model: ``x = mu + y + e`` with ``y ~ N(0, B)`` per speaker and
``e ~ N(0, W)`` per session. The same/different-speaker log-likelihood ratio
is a quadratic form, precomputed once as :class:`ScoringForm`::

    llr(x1, x2) = x1'Q x1 + x2'Q x2 + 2 x1'P x2 + c'(x1 + x2) + k0
"""
from __future__ import annotations

import hashlib
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import multivariate_normal

from . import io as vio
from .errors import DegenerateInputError, DimensionError, FormatError, ModelError


class IdentifiabilityWarning(UserWarning):
    """Between-speaker covariance cannot be separated from session noise."""


@dataclass
class PldaModel:
    mean: np.ndarray
    between: np.ndarray
    within: np.ndarray
    norm_mean: np.ndarray | None = None  # centering used by length normalisation
    iterations: int = 0
    tolerance: float = 0.0
    loglik: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.between = np.atleast_2d(np.asarray(self.between, dtype=np.float64))
        self.within = np.atleast_2d(np.asarray(self.within, dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self) -> None:
        for name in ("between", "within"):
            m = getattr(self, name)
            if m.shape != (self.dim, self.dim):
                raise ModelError(f"{name} has shape {m.shape}, expected {(self.dim, self.dim)}")
            if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ModelError(f"{name} is not symmetric")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise ModelError(f"{name} is not positive definite") from None

    def save(self, path) -> None:
        """Text header, blank line, then VCDB blobs (mean, B, W[, norm_mean])."""
        header = (f"PLDA two-covariance\nD = {self.dim}\niterations = {self.iterations}\n"
                  f"tolerance = {self.tolerance!r}\n\n").encode()
        with open(path, "wb") as fh:
            fh.write(header)
            for arr in (self.mean, self.between, self.within):
                vio.write_array(fh, arr)
            if self.norm_mean is not None:
                vio.write_array(fh, self.norm_mean)

    @classmethod
    def load(cls, path) -> "PldaModel":
        data = Path(path).read_bytes()
        head, sep, body = data.partition(b"\n\n")
        if not sep or not head.startswith(b"PLDA"):
            raise FormatError(f"{path}: not a PLDA model file")
        fields = {}
        for line in head.decode().splitlines()[1:]:
            k, v = line.split("=", 1)
            fields[k.strip()] = v.strip()
        fh = io.BytesIO(body)
        arrays = []
        while fh.tell() < len(body):
            arrays.append(vio.read_array(fh))
        if len(arrays) not in (3, 4) or arrays[0].size != int(fields["D"]):
            raise FormatError(f"{path}: unexpected model payload")
        return cls(arrays[0], arrays[1], arrays[2], arrays[3] if len(arrays) == 4 else None,
                   int(fields["iterations"]), float(fields["tolerance"]))


@dataclass(frozen=True)
class ScoringForm:
    Q: np.ndarray
    P: np.ndarray
    c: np.ndarray
    k0: float

    @property
    def dim(self) -> int:
        return self.c.size

    @property
    def form_id(self) -> str:
        h = hashlib.sha256()
        for arr in (self.Q, self.P, self.c, np.array([self.k0])):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def zero(cls, dim: int) -> "ScoringForm":
        z = np.zeros((dim, dim))
        return cls(z, z.copy(), np.zeros(dim), 0.0)


# -- preprocessing --------------------------------------------------------------------

def preprocess(embeddings, mean=None) -> np.ndarray:
    """Centre and project onto the unit sphere. Returns (n, D)."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    m = x.mean(axis=0) if mean is None else np.asarray(mean, dtype=np.float64)
    centred = x - m
    norms = np.linalg.norm(centred, axis=1)
    if np.any(norms == 0):
        raise DegenerateInputError("zero vector after mean subtraction")
    return centred / norms[:, None]


# -- training -------------------------------------------------------------------------

def _regularised(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(m)
        return m
    except np.linalg.LinAlgError:
        pass
    fixed = m + 1e-6 * np.trace(m) / m.shape[0] * np.eye(m.shape[0])
    try:
        np.linalg.cholesky(fixed)
    except np.linalg.LinAlgError:
        raise ModelError("covariance update singular even after regularisation") from None
    return fixed


def _logdet(m):
    sign, val = np.linalg.slogdet(m)
    return val


def _grouped(x, labels):
    """Per speaker: (count, sum, within-speaker scatter)."""
    uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
    D = x.shape[1]
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    sums = np.zeros((len(uniq), D))
    np.add.at(sums, inv, x)
    means = sums / counts[:, None]
    dev = x - means[inv]
    scatter = dev.T @ dev
    return counts, means, scatter


def log_likelihood(model: PldaModel, x, labels) -> float:
    """Marginal log-likelihood of the data, speaker latents integrated out."""
    x = np.atleast_2d(x)
    counts, means, scatter = _grouped(x, labels)
    D = x.shape[1]
    B, W, mu = model.between, model.within, model.mean
    W_inv = np.linalg.inv(W)
    n_total = counts.sum()
    S = len(counts)
    # within-speaker deviations: sum_i [(n_i-1) terms] collapse to totals
    ll = -0.5 * (n_total - S) * (D * np.log(2 * np.pi) + _logdet(W))
    ll -= 0.5 * np.sum(W_inv * scatter)
    ll -= 0.5 * D * np.log(counts).sum()
    for n in np.unique(counts):
        sel = counts == n
        cov = B + W / n
        ll += multivariate_normal(mu, cov).logpdf(means[sel]).sum()
    return float(ll)


def fit_plda(embeddings, labels, max_iter: int = 100, tol: float = 1e-8,
             init: PldaModel | None = None) -> PldaModel:
    """EM for the two-covariance model.

    Stops when the relative log-likelihood gain drops below ``tol`` or after
    ``max_iter`` iterations. The per-iteration log-likelihood is kept on the
    returned model.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    if len(labels) != x.shape[0]:
        raise DimensionError("one label per embedding required")
    counts, spk_means, scatter = _grouped(x, labels)
    S, D = len(counts), x.shape[1]
    if S < 2:
        raise ModelError("need at least two speakers")
    if counts.max() < 2:
        warnings.warn("no speaker has two sessions; between-speaker covariance is "
                      "not identifiable", IdentifiabilityWarning, stacklevel=2)
    N = counts.sum()
    sums = spk_means * counts[:, None]

    if init is None:
        mu = x.mean(axis=0)
        W = scatter / max(N - S, 1.0) if counts.max() >= 2 else np.cov(x.T) / 2
        B = np.cov(spk_means.T, bias=True) - W / counts.mean()
        w_eig = np.linalg.eigvalsh(W)
        B = _floor_eig(B, 1e-3 * max(w_eig.max(), 1e-12))
        W = _regularised(np.atleast_2d(W))
    else:
        mu, B, W = init.mean.copy(), init.between.copy(), init.within.copy()
    model = PldaModel(mu, B, W)
    history = [log_likelihood(model, x, labels)]
    sizes = np.unique(counts)
    it = 0
    for it in range(1, max_iter + 1):
        B_inv = np.linalg.inv(B)
        W_inv = np.linalg.inv(W)
        # E-step: y_i | x ~ N(m_i, L_{n_i}) with y centred on mu
        post_mean = np.empty((S, D))
        cov_sum = np.zeros((D, D))
        cov_weighted = np.zeros((D, D))
        for n in sizes:
            sel = counts == n
            L = np.linalg.inv(B_inv + n * W_inv)
            post_mean[sel] = ((sums[sel] - n * mu) @ W_inv.T) @ L.T
            cov_sum += sel.sum() * L
            cov_weighted += sel.sum() * n * L
        # M-step
        mu_new = (sums - counts[:, None] * post_mean).sum(axis=0) / N
        B = _regularised((post_mean.T @ post_mean + cov_sum) / S)
        # residual r_ij = x_ij - mu - m_i; sum r r' = scatter + sum_i n_i (xbar_i - mu - m_i)(...)'
        resid = spk_means - mu_new - post_mean
        W = _regularised((scatter + (resid * counts[:, None]).T @ resid + cov_weighted) / N)
        mu = mu_new
        model = PldaModel(mu, B, W)
        history.append(log_likelihood(model, x, labels))
        if abs(history[-1] - history[-2]) <= tol * abs(history[-2]):
            break
    model.iterations = it
    model.tolerance = tol
    model.loglik = history
    return model


def _floor_eig(m, floor):
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def fit_backend(embeddings, labels, **kw) -> PldaModel:
    """Length-normalise with the training mean, then fit; the mean is kept."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    centre = x.mean(axis=0)
    model = fit_plda(preprocess(x, centre), labels, **kw)
    model.norm_mean = centre
    return model


# -- scoring -------------------------------------------------------------------------

def scoring_form(model: PldaModel) -> ScoringForm:
    model.validate()
    B, W, mu = model.between, model.within, model.mean
    T = B + W
    T_inv = np.linalg.inv(T)
    schur = T - B @ T_inv @ B
    A = np.linalg.inv(schur)
    Q = 0.5 * (T_inv - A)
    P = 0.5 * T_inv @ B @ A
    Q = 0.5 * (Q + Q.T)
    P = 0.5 * (P + P.T)
    QP = Q + P
    k_centred = 0.5 * (_logdet(T) - _logdet(schur))
    c = -2.0 * QP @ mu
    k0 = float(k_centred + 2.0 * mu @ QP @ mu)
    return ScoringForm(Q, P, c, k0)


def plda_score(form: ScoringForm, x1, x2) -> float:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != (form.dim,) or x2.shape != (form.dim,):
        raise DimensionError(f"expected {form.dim}-dim vectors, got {x1.shape} and {x2.shape}")
    # every pair of terms is summed commutatively so swapping the inputs is exact
    quad = (x1 @ form.Q @ x1) + (x2 @ form.Q @ x2)
    cross = (x1 @ form.P @ x2) + (x2 @ form.P @ x1)
    return float(quad + cross + form.c @ (x1 + x2) + form.k0)


def score_matrix(form: ScoringForm, X1, X2) -> np.ndarray:
    """All-pairs scores between rows of X1 and X2."""
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    s1 = np.einsum("ij,jk,ik->i", X1, form.Q, X1) + X1 @ form.c
    s2 = np.einsum("ij,jk,ik->i", X2, form.Q, X2) + X2 @ form.c
    return s1[:, None] + s2[None, :] + 2.0 * X1 @ form.P @ X2.T + form.k0


def joint_llr_oracle(model: PldaModel, x1, x2) -> float:
    """Direct evaluation of the two 2D-dimensional joint Gaussian densities."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    D = model.dim
    if x1.shape != (D,) or x2.shape != (D,):
        raise DimensionError("dimension mismatch")
    B, W = model.between, model.within
    T = B + W
    Z = np.zeros((D, D))
    same = np.block([[T, B], [B, T]])
    diff = np.block([[T, Z], [Z, T]])
    z = np.concatenate([x1, x2])
    m = np.concatenate([model.mean, model.mean])
    try:
        return float(multivariate_normal(m, same).logpdf(z) - multivariate_normal(m, diff).logpdf(z))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ModelError(f"singular joint covariance: {exc}") from exc
