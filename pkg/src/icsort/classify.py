"""Shallow learning for step 2 and the LS-SVM comparison baseline.

The soft-margin linear SVM is solved in the dual with maximal-violating-pair
SMO and an explicit duality-gap stopping certificate; posteriors come from
Platt scaling fitted on out-of-sample decision values.  SMOTE balances the
SOZ minority before training.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, TrainingError

SVM_FORMAT_VERSION = 1

FEATURE_NAMES = ("n_clusters", "wm_overlap", "activelet_gini", "sine_gini", "hf_dominant")


@dataclass
class FeatureVector:
    n_clusters: float
    wm_overlap: float
    activelet_gini: float
    sine_gini: float
    hf_dominant: float

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.n_clusters, self.wm_overlap, self.activelet_gini, self.sine_gini, self.hf_dominant],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        return cls(*(float(v) for v in arr))


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd < 1e-12, 1.0, sd)  # constant features pass through centered
        return cls(mean=mean, sd=sd)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.sd


# ---------------------------------------------------------------------------
# SMOTE
# ---------------------------------------------------------------------------


def smote_oversample(
    minority: np.ndarray, target_count: int, k: int = 5, seed: int = 0
) -> np.ndarray:
    """Synthetic minority samples x_i + lambda (x_j - x_i) with x_j among the
    k nearest minority neighbors (Euclidean) and lambda ~ U(0, 1)."""
    X = np.asarray(minority, dtype=np.float64)
    m = len(X)
    if m < 2:
        raise TrainingError(f"SMOTE needs at least 2 minority samples, got {m}")
    n_new = target_count - m
    if n_new <= 0:
        return np.empty((0, X.shape[1]))
    if k > m - 1:
        warnings.warn(f"SMOTE k={k} clamped to {m - 1} (minority size {m})", stacklevel=2)
        k = m - 1
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.Generator(np.random.PCG64(seed))
    base = rng.integers(0, m, size=n_new)
    pick = rng.integers(0, k, size=n_new)
    lam = rng.random(n_new)
    xi = X[base]
    xj = X[neighbors[base, pick]]
    return xi + lam[:, None] * (xj - xi)


def balance_with_smote(
    X: np.ndarray, y: np.ndarray, k: int = 5, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Oversample every minority class up to the majority count."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    counts = {c: int((y == c).sum()) for c in np.unique(y)}
    target = max(counts.values())
    xs, ys = [X], [y]
    for j, c in enumerate(sorted(counts)):
        if counts[c] < target:
            syn = smote_oversample(X[y == c], target, k=k, seed=seed + j)
            xs.append(syn)
            ys.append(np.full(len(syn), c, dtype=int))
    return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# Soft-margin linear SVM via SMO
# ---------------------------------------------------------------------------


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    C: float
    platt_a: float
    platt_b: float
    standardizer: Standardizer | None = None
    diagnostics: dict = field(default_factory=dict)

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        return X @ self.w + self.b

    def posterior(self, X: np.ndarray) -> np.ndarray:
        # p = 1 / (1 + exp(A f + B)): monotone decreasing in (A f + B), so a
        # fitted A < 0 makes p increase with the decision value f.
        f = self.decision_values(X)
        return _platt_transform(f, self.platt_a, self.platt_b)


def _platt_transform(f: np.ndarray, a: float, b: float) -> np.ndarray:
    z = a * np.asarray(f, dtype=np.float64) + b
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def _optimal_bias(f: np.ndarray, y: np.ndarray, C: float, wnorm2: float) -> tuple[float, float]:
    """Bias minimizing the primal objective for fixed w, plus the primal value.

    Hinge terms are max(0, y_i (k_i - b)) with kinks k_i = y_i - f_i; the
    objective is convex piecewise linear in b, and its slope increases by C at
    every kink, starting at -C * n_pos, so the minimum sits at the n_pos-th
    smallest kink.
    """
    kinks = y - f
    n_pos = int((y > 0).sum())
    b = float(np.partition(kinks, n_pos - 1)[n_pos - 1])
    hinge = np.maximum(0.0, 1.0 - y * (f + b))
    return b, 0.5 * wnorm2 + C * hinge.sum()


def _solve_smo(
    X: np.ndarray, y: np.ndarray, C: float, gap_tol: float, max_iter: int
) -> tuple[np.ndarray, float, dict]:
    """Dual SMO with maximal violating pair selection.

    Returns (w, b, diagnostics); stops when the true duality gap falls below
    gap_tol * (1 + |primal|).
    """
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    f = np.zeros(n)
    tiny = 1e-12
    best = None
    check_every = 64

    for it in range(1, max_iter + 1):
        v = y - f  # = -y * dual gradient
        up = ((y > 0) & (alpha < C - tiny)) | ((y < 0) & (alpha > tiny))
        low = ((y < 0) & (alpha < C - tiny)) | ((y > 0) & (alpha > tiny))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(v[up])])
        j = int(np.flatnonzero(low)[np.argmin(v[low])])
        violation = v[i] - v[j]

        if violation <= tiny or it % check_every == 0:
            dual = alpha.sum() - 0.5 * (w @ w)
            b, primal = _optimal_bias(f, y, C, w @ w)
            gap = primal - dual
            best = (w.copy(), b, {"iterations": it, "gap": gap, "primal": primal, "dual": dual})
            if gap <= gap_tol * (1.0 + abs(primal)) or violation <= tiny:
                return best

        delta = X[i] - X[j]
        eta = float(delta @ delta)
        # Box bounds for the step alpha_i += y_i t, alpha_j -= y_j t.
        hi_i = C - alpha[i] if y[i] > 0 else alpha[i]
        hi_j = alpha[j] if y[j] > 0 else C - alpha[j]
        t_hi = min(hi_i, hi_j)
        if eta <= tiny:
            t = t_hi  # duplicate points with opposite labels: objective linear in t
        else:
            t = min(violation / eta, t_hi)
        if t <= 0:
            break
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        w += t * delta
        f += X @ (t * delta)

    dual = alpha.sum() - 0.5 * (w @ w)
    b, primal = _optimal_bias(f, y, C, w @ w)
    gap = primal - dual
    if gap <= gap_tol * (1.0 + abs(primal)):
        return w, b, {"iterations": max_iter, "gap": gap, "primal": primal, "dual": dual}
    if best is not None and best[2]["gap"] <= gap_tol * (1.0 + abs(best[2]["primal"])):
        return best
    raise TrainingError(
        f"SVM did not reach duality gap {gap_tol} within {max_iter} iterations "
        f"(gap={gap:.3e}, primal={primal:.6g}, dual={dual:.6g})"
    )


def _platt_fit(decision: np.ndarray, y01: np.ndarray, max_iter: int = 200) -> tuple[float, float]:
    """Regularized maximum-likelihood sigmoid fit (Platt scaling with the
    Lin-Weng-Keerthi Newton iteration and target smoothing)."""
    f = np.asarray(decision, dtype=np.float64)
    y01 = np.asarray(y01)
    prior1 = float((y01 > 0).sum())
    prior0 = float(len(y01) - prior1)
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(y01 > 0, hi, lo)

    a, b = 0.0, float(np.log((prior0 + 1.0) / (prior1 + 1.0)))

    def objective(a_, b_):
        z = a_ * f + b_
        # log(1 + exp(-z)) + (1 - t) z, written stably for both signs of z
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(a, b)
    sigma = 1e-12
    for _ in range(max_iter):
        p = _platt_transform(f, a, b)
        # dF/dz = t - p with z = a f + b, so the Newton weights are p (1 - p).
        grad_a = float(np.sum((t - p) * f))
        grad_b = float(np.sum(t - p))
        if abs(grad_a) < 1e-10 and abs(grad_b) < 1e-10:
            break
        w_h = p * (1.0 - p)
        h11 = float(np.sum(f * f * w_h)) + sigma
        h22 = float(np.sum(w_h)) + sigma
        h12 = float(np.sum(f * w_h))
        det = h11 * h22 - h12 * h12
        da = -(h22 * grad_a - h12 * grad_b) / det
        db = -(-h12 * grad_a + h11 * grad_b) / det
        g2 = grad_a * da + grad_b * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            if nf < fval + 1e-4 * step * g2:
                a, b, fval = na, nb, nf
                break
            step /= 2
        else:
            break
    return a, b


def _stratified_folds(y: np.ndarray, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        for pos, sample in enumerate(idx):
            folds[pos % n_folds].append(int(sample))
    return [np.array(sorted(fold)) for fold in folds if fold]


def train_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    seed: int = 0,
    gap_tol: float = 1e-6,
    max_iter: int = 500_000,
    standardizer: Standardizer | None = None,
) -> SvmModel:
    """Soft-margin linear SVM on standardized features with Platt posteriors.

    y: 0 = RSN, 1 = SOZ.  Calibration decision values come from an inner
    3-fold split so posteriors are not optimistically biased.
    """
    X = np.asarray(X, dtype=np.float64)
    y01 = np.asarray(y, dtype=int)
    if set(np.unique(y01)) != {0, 1}:
        raise TrainingError("train_svm needs both classes (0 and 1) present")
    ypm = 2.0 * y01 - 1.0

    rng = np.random.Generator(np.random.PCG64(seed))
    min_class = min(int((y01 == 0).sum()), int((y01 == 1).sum()))
    calib_f: list[np.ndarray] = []
    calib_y: list[np.ndarray] = []
    if min_class >= 2:
        n_folds = min(3, min_class)
        folds = _stratified_folds(y01, n_folds, rng)
        for held in folds:
            train_mask = np.ones(len(y01), dtype=bool)
            train_mask[held] = False
            if len(np.unique(y01[train_mask])) < 2:
                continue
            w_f, b_f, _ = _solve_smo(X[train_mask], ypm[train_mask], C, gap_tol, max_iter)
            calib_f.append(X[held] @ w_f + b_f)
            calib_y.append(y01[held])

    w, b, diag = _solve_smo(X, ypm, C, gap_tol, max_iter)
    if calib_f:
        a_p, b_p = _platt_fit(np.concatenate(calib_f), np.concatenate(calib_y))
    else:  # degenerate tiny sets: fall back to training decision values
        a_p, b_p = _platt_fit(X @ w + b, y01)
    return SvmModel(
        w=w, b=b, C=C, platt_a=a_p, platt_b=b_p, standardizer=standardizer, diagnostics=diag
    )


def save_svm_model(model: SvmModel, path: str | Path, feature_names: tuple[str, ...] | None = None) -> Path:
    """Versioned JSON container; floats round-trip exactly via repr."""
    doc = {
        "format_version": SVM_FORMAT_VERSION,
        "w": model.w.tolist(),
        "b": model.b,
        "C": model.C,
        "platt_a": model.platt_a,
        "platt_b": model.platt_b,
        "standardizer": None
        if model.standardizer is None
        else {"mean": model.standardizer.mean.tolist(), "sd": model.standardizer.sd.tolist()},
        "feature_names": list(feature_names) if feature_names else None,
        "diagnostics": model.diagnostics,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def load_svm_model(path: str | Path) -> SvmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != SVM_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported SVM container version")
    std = None
    if doc["standardizer"] is not None:
        std = Standardizer(
            mean=np.array(doc["standardizer"]["mean"]), sd=np.array(doc["standardizer"]["sd"])
        )
    return SvmModel(
        w=np.array(doc["w"]),
        b=doc["b"],
        C=doc["C"],
        platt_a=doc["platt_a"],
        platt_b=doc["platt_b"],
        standardizer=std,
        diagnostics=doc.get("diagnostics", {}),
    )


def predict_posterior(model: SvmModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels, p_soz): label 1 (SOZ) iff the decision value is strictly
    positive (ties go to RSN)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    f = model.decision_values(X)
    labels = (f > 0).astype(int)
    return labels, _platt_transform(f, model.platt_a, model.platt_b)


# ---------------------------------------------------------------------------
# LS-SVM baseline (one-vs-one, linear kernel)
# ---------------------------------------------------------------------------


@dataclass
class LsSvmPair:
    pos: int
    neg: int
    w: np.ndarray  # X^T alpha collapses the linear kernel expansion
    b: float


@dataclass
class LsSvmModel:
    classes: tuple[int, ...]
    pairs: list[LsSvmPair]
    gamma: float
    standardizer: Standardizer | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        votes = np.zeros((len(X), len(self.classes)))
        margins = np.zeros((len(X), len(self.classes)))
        index = {c: k for k, c in enumerate(self.classes)}
        for pair in self.pairs:
            fvals = X @ pair.w + pair.b
            pos_wins = fvals > 0
            votes[pos_wins, index[pair.pos]] += 1
            votes[~pos_wins, index[pair.neg]] += 1
            margins[:, index[pair.pos]] += fvals
            margins[:, index[pair.neg]] -= fvals
        # Majority vote; ties broken by the summed signed margins, then by
        # class code for full determinism.
        out = np.empty(len(X), dtype=int)
        for r in range(len(X)):
            k = max(range(len(self.classes)), key=lambda c: (votes[r, c], margins[r, c], -c))
            out[r] = self.classes[k]
        return out


def solve_ls_svm(K_or_X: np.ndarray, y: np.ndarray, gamma: float, low_rank: bool) -> tuple[np.ndarray, float]:
    """Solve [0 1^T; 1 K + I/gamma] [b; alpha] = [0; y].

    With the linear kernel K = X X^T the Woodbury identity reduces every
    solve against (K + I/gamma) to a d x d system, which keeps the balanced
    baseline tractable; the result is identical to solving the full system.
    """
    y = np.asarray(y, dtype=np.float64)
    if low_rank:
        X = np.asarray(K_or_X, dtype=np.float64)
        n, d = X.shape
        G = np.eye(d) + gamma * (X.T @ X)

        def m_solve(r):
            xr = X.T @ r
            return gamma * r - gamma * gamma * (X @ np.linalg.solve(G, xr))

        u_y = m_solve(y)
        u_1 = m_solve(np.ones(n))
    else:
        K = np.asarray(K_or_X, dtype=np.float64)
        n = K.shape[0]
        M = K + np.eye(n) / gamma
        u = np.linalg.solve(M, np.column_stack([y, np.ones(n)]))
        u_y, u_1 = u[:, 0], u[:, 1]
    denom = float(u_1.sum())
    if abs(denom) < 1e-12:
        raise TrainingError("LS-SVM system is singular (1^T M^-1 1 == 0)")
    b = float(u_y.sum()) / denom
    alpha = u_y - b * u_1
    return alpha, b


def train_ls_svm_baseline(
    X: np.ndarray,
    y: np.ndarray,
    gamma: float = 1.0,
    seed: int = 0,
    smote_k: int = 5,
) -> LsSvmModel:
    """Three-class LS-SVM baseline: standardize, SMOTE-balance all classes,
    then train one-vs-one linear LS-SVM classifiers."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 3:
        raise TrainingError(f"LS-SVM baseline needs three classes, got {classes}")
    if gamma <= 0:
        raise TrainingError("gamma must be positive")
    standardizer = Standardizer.fit(X)
    Xs = standardizer.transform(X)
    Xb, yb = balance_with_smote(Xs, y, k=smote_k, seed=seed)

    pairs = []
    for a_i in range(len(classes)):
        for b_i in range(a_i + 1, len(classes)):
            pos, neg = classes[b_i], classes[a_i]
            mask = (yb == pos) | (yb == neg)
            Xp = Xb[mask]
            yp = np.where(yb[mask] == pos, 1.0, -1.0)
            alpha, bias = solve_ls_svm(Xp, yp, gamma, low_rank=True)
            pairs.append(LsSvmPair(pos=pos, neg=neg, w=Xp.T @ alpha, b=bias))
    return LsSvmModel(classes=classes, pairs=pairs, gamma=gamma, standardizer=standardizer)
