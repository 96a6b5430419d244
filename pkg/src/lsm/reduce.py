"""Feature standardization, principal components, and collinearity diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

# Columns with sample std below this are flagged degenerate and left unscaled.
EPSILON = 1e-12

TOLERANCE_THRESHOLD = 0.1
VIF_THRESHOLD = 10.0


def _check_matrix(X: np.ndarray, min_rows: int = 2) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


@dataclass
class Standardizer:
    """Per-column centering and scaling fitted on training data."""

    mean: np.ndarray
    std: np.ndarray
    epsilon: float = EPSILON
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.mean.shape, dtype=bool)
        else:
            self.degenerate = np.asarray(self.degenerate, dtype=bool)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Standardize an array whose last axis indexes the fitted columns."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValueError(
                f"last axis has {X.shape[-1]} columns, standardizer was fit on "
                f"{self.mean.shape[0]}"
            )
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "epsilon": self.epsilon,
            "degenerate": self.degenerate.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            np.array(d["mean"]), np.array(d["std"]), d["epsilon"], np.array(d["degenerate"])
        )


def fit_standardizer(X: np.ndarray, epsilon: float = EPSILON) -> Standardizer:
    """Fit per-column mean and sample standard deviation (n - 1 denominator).

    Columns with std below ``epsilon`` keep std 1 and are flagged degenerate.
    """
    X = _check_matrix(X)
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    degen = std < epsilon
    std = np.where(degen, 1.0, std)
    return Standardizer(mean, std, epsilon, degen)


def _jacobi_eigh(C: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps all upper-triangle pairs with two-sided rotations until the
    off-diagonal Frobenius norm falls below tol relative to the matrix norm.
    Returns (eigenvalues, eigenvectors-as-columns), unordered.
    """
    A = np.array(C, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    scale = max(float(np.linalg.norm(A)), 1.0)
    for _ in range(max_sweeps):
        # Sum off-diagonal squares directly; subtracting the diagonal from
        # the total norm cancels catastrophically near convergence.
        B = A.copy()
        np.fill_diagonal(B, 0.0)
        off = float(np.linalg.norm(B))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol * scale * 1e-3:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                colp, colq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp, rowq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return A.diagonal().copy(), V


@dataclass
class PcaModel:
    """Orthogonal projection fitted on standardized training data.

    ``projection`` holds all components as columns, ordered by descending
    eigenvalue; ``k`` is the retained count used by :func:`pca_transform`.
    """

    projection: np.ndarray
    eigenvalues: np.ndarray
    cum_explained: np.ndarray
    k: int
    standardizer: Standardizer

    def to_dict(self) -> dict:
        return {
            "projection": self.projection.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "cum_explained": self.cum_explained.tolist(),
            "k": self.k,
            "standardizer": self.standardizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            np.array(d["projection"]),
            np.array(d["eigenvalues"]),
            np.array(d["cum_explained"]),
            int(d["k"]),
            Standardizer.from_dict(d["standardizer"]),
        )


def pca_fit(X: np.ndarray, standardizer: Standardizer) -> PcaModel:
    """Principal components of the sample covariance of standardized data.

    The covariance uses the n - 1 denominator and is eigendecomposed with a
    cyclic Jacobi solver. Components are ordered by descending eigenvalue,
    eigenvalues are clamped at zero, and each component's largest-magnitude
    entry is made positive so the decomposition is deterministic.
    """
    X = _check_matrix(X)
    Xs = standardizer.transform(X)
    n = Xs.shape[0]
    C = Xs.T @ Xs / (n - 1)
    vals, vecs = _jacobi_eigh(C)
    if vals.min() < -1e-10:
        raise ValueError(f"covariance eigenvalue {vals.min()} below -1e-10")
    vals = np.maximum(vals, 0.0)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    total = vals.sum()
    if total <= 0:
        raise ValueError("total variance is zero; PCA is undefined")
    cum = np.cumsum(vals) / total
    return PcaModel(vecs, vals, cum, k=vals.size, standardizer=standardizer)


def select_k(model: PcaModel, threshold: float = 0.9) -> int:
    """Smallest component count whose cumulative explained variance reaches
    the threshold."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    reach = np.nonzero(model.cum_explained >= threshold - 1e-12)[0]
    if reach.size == 0:
        return int(model.eigenvalues.size)
    return int(reach[0]) + 1


def with_k(model: PcaModel, k: int) -> PcaModel:
    if not 1 <= k <= model.eigenvalues.size:
        raise ValueError(f"k must lie in [1, {model.eigenvalues.size}]")
    return replace(model, k=k)


def pca_transform(model: PcaModel, X: np.ndarray) -> np.ndarray:
    """Project onto the first k components; last axis indexes features."""
    X = np.asarray(X, dtype=np.float64)
    Xs = model.standardizer.transform(X)
    return Xs @ model.projection[:, : model.k]



def pca_transform_features(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Apply the projection over the trailing axis of x (any leading shape)."""
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    return pca_transform(model, flat).reshape(lead + (model.k,))

@dataclass
class CollinearityReport:
    """Per-feature tolerance and variance-inflation diagnostics."""

    names: list[str]
    r2: np.ndarray
    tolerance: np.ndarray
    vif: np.ndarray
    infinite: np.ndarray
    tolerance_threshold: float = TOLERANCE_THRESHOLD
    vif_threshold: float = VIF_THRESHOLD

    @property
    def tolerance_ok(self) -> np.ndarray:
        return self.tolerance > self.tolerance_threshold

    @property
    def vif_ok(self) -> np.ndarray:
        return self.vif < self.vif_threshold

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "r2": self.r2.tolist(),
            "tolerance": self.tolerance.tolist(),
            "vif": self.vif.tolist(),
            "infinite": self.infinite.tolist(),
            "tolerance_threshold": self.tolerance_threshold,
            "vif_threshold": self.vif_threshold,
            "tolerance_ok": self.tolerance_ok.tolist(),
            "vif_ok": self.vif_ok.tolist(),
        }

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "r2", "tolerance", "vif", "infinite", "tolerance_ok", "vif_ok"])
            for i, name in enumerate(self.names):
                w.writerow(
                    [
                        name,
                        repr(float(self.r2[i])),
                        repr(float(self.tolerance[i])),
                        repr(float(self.vif[i])),
                        bool(self.infinite[i]),
                        bool(self.tolerance_ok[i]),
                        bool(self.vif_ok[i]),
                    ]
                )


def _r2_with_intercept(y: np.ndarray, others: np.ndarray) -> float:
    """Coefficient of determination of an intercept-bearing least squares fit.

    Solves the normal equations directly, falling back to a minimum-norm
    solve when the Gram matrix is singular (exactly collinear predictors).
    """
    A = np.column_stack([np.ones(y.shape[0]), others])
    G = A.T @ A
    b = A.T @ y
    try:
        beta = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
    resid = y - A @ beta
    ssr = float(resid @ resid)
    yc = y - y.mean()
    sst = float(yc @ yc)
    if sst <= 0:
        return 0.0
    return min(max(1.0 - ssr / sst, 0.0), 1.0)


def collinearity(X: np.ndarray, names: list[str] | None = None) -> CollinearityReport:
    """Tolerance (1 - R^2) and VIF (1 / tolerance) for every feature.

    Each feature is regressed on all the others with an intercept. Tolerance
    is clamped below at 1e-12 before inversion; clamped features are flagged
    infinite. Requires more rows than features.
    """
    X = _check_matrix(X)
    n, p = X.shape
    if p < 2:
        raise ValueError("collinearity needs at least 2 features")
    if n <= p:
        raise ValueError(f"need more rows than features, got {n} rows for {p} features")
    if names is None:
        names = [f"f{i:02d}" for i in range(p)]
    if len(names) != p:
        raise ValueError("names length does not match feature count")
    r2 = np.empty(p)
    for i in range(p):
        r2[i] = _r2_with_intercept(X[:, i], np.delete(X, i, axis=1))
    tolerance = 1.0 - r2
    infinite = tolerance < EPSILON
    vif = 1.0 / np.maximum(tolerance, EPSILON)
    return CollinearityReport(list(names), r2, tolerance, vif, infinite)
