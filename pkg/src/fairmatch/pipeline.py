"""Bid-data ingestion and prediction models.

Turns raw conference bid files into observed score matrices, fits the two
pair-level prediction models (logistic matrix factorization for binary
bids, squared-error matrix factorization with residual-calibrated variances
for continuous scores), and builds balanced groups of papers and reviewers
by constrained spectral clustering. The estimators follow the sklearn
fit/predict convention so they compose with the usual tooling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .kernels.lp import LinearProgram, solve_lp
from .uncertainty import Bernoulli, Gaussian

__all__ = [
    "BidDataset",
    "FactorModel",
    "load_bids",
    "save_bids",
    "drop_no_bids",
    "binarize",
    "scorize",
    "split_train_test",
    "LogisticMatrixFactorization",
    "GaussianPairsModel",
    "BalancedSpectralClustering",
]

BID_LEVELS = ("yes", "maybe", "no")


@dataclass(frozen=True)
class BidDataset:
    """Sparse paper x reviewer bids; absent pairs mean 'no response'."""

    n_papers: int
    n_reviewers: int
    bids: tuple  # ((paper, reviewer, bid), ...) with bid in BID_LEVELS
    conflicts: np.ndarray | None = None

    def __post_init__(self):
        seen = set()
        for p, r, b in self.bids:
            if not (0 <= p < self.n_papers and 0 <= r < self.n_reviewers):
                raise ValueError(f"bid ({p}, {r}) out of range")
            if b not in BID_LEVELS:
                raise ValueError(f"unknown bid level {b!r}")
            if (p, r) in seen:
                raise ValueError(f"duplicate bid for pair ({p}, {r})")
            seen.add((p, r))

    @property
    def n_bids(self):
        return len(self.bids)


def load_bids(path, format="triples_csv") -> BidDataset:
    if format == "triples_csv":
        return _load_triples(path)
    if format == "preflib_categorical":
        return _load_preflib(path)
    raise ValueError(f"unknown bid format {format!r}")


def _load_triples(path):
    triples = []
    max_p = max_r = -1
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip().lower() in ("paper_id", "paper"):
                continue  # header
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected paper_id,reviewer_id,bid")
            try:
                p, r = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer ids") from exc
            bid = row[2].strip().lower()
            if bid not in BID_LEVELS:
                raise ValueError(f"{path}:{lineno}: unknown bid {row[2]!r}")
            triples.append((p, r, bid))
            max_p, max_r = max(max_p, p), max(max_r, r)
    return BidDataset(max_p + 1, max_r + 1, tuple(triples))


def _load_preflib(path):
    """PrefLib categorical layout: voters are reviewers, alternatives papers.

    Metadata lines start with '#'; each data line reads
    ``multiplicity: {cat1 alternatives},{cat2},...`` with category names
    declared in the header and matched onto yes/maybe/no case-insensitively.
    """
    categories = {}
    n_papers = 0
    n_reviewers_declared = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" not in body:
                    continue
                key, _, value = body.partition(":")
                key = key.strip().upper()
                value = value.strip()
                if key.startswith("CATEGORY NAME"):
                    idx = int(key.rsplit(" ", 1)[1])
                    categories[idx] = value.lower()
                elif key == "NUMBER ALTERNATIVES":
                    n_papers = int(value)
                elif key == "NUMBER VOTERS":
                    n_reviewers_declared = int(value)
                continue
            mult_str, _, rest = line.partition(":")
            try:
                mult = int(mult_str.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed data line") from exc
            groups = []
            depth, token = 0, ""
            for ch in rest:
                if ch == "{":
                    depth += 1
                    token = ""
                elif ch == "}":
                    depth -= 1
                    items = [t.strip() for t in token.split(",") if t.strip()]
                    groups.append([int(t) for t in items])
                elif depth:
                    token += ch
            rows.append((mult, groups, lineno))
    triples = []
    reviewer = 0
    for mult, groups, lineno in rows:
        for _ in range(mult):
            for cat_idx, alternatives in enumerate(groups, start=1):
                label = categories.get(cat_idx, "")
                if label not in BID_LEVELS:
                    if alternatives:
                        raise ValueError(f"{path}:{lineno}: category {cat_idx} ({label!r}) is not yes/maybe/no")
                    continue
                for alt in alternatives:
                    triples.append((alt - 1, reviewer, label))  # PrefLib ids are 1-based
            reviewer += 1
    n_reviewers = n_reviewers_declared if n_reviewers_declared else reviewer
    if n_papers == 0 and triples:
        n_papers = max(t[0] for t in triples) + 1
    return BidDataset(n_papers, n_reviewers, tuple(triples))


def save_bids(ds: BidDataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["paper_id", "reviewer_id", "bid"])
        for p, r, b in ds.bids:
            writer.writerow([p, r, b])


def drop_no_bids(ds: BidDataset, fraction=0.9, seed=0) -> BidDataset:
    """Convert a seeded fraction of 'no' bids to no-response (drop them)."""
    rng = np.random.default_rng(seed)
    no_idx = [i for i, (_, _, b) in enumerate(ds.bids) if b == "no"]
    n_drop = int(round(fraction * len(no_idx)))
    drop = set(rng.choice(no_idx, size=n_drop, replace=False)) if n_drop else set()
    kept = tuple(t for i, t in enumerate(ds.bids) if i not in drop)
    return BidDataset(ds.n_papers, ds.n_reviewers, kept, ds.conflicts)


def binarize(ds: BidDataset):
    """yes/maybe -> 1, no -> 0; mask marks observed pairs."""
    values = np.zeros((ds.n_papers, ds.n_reviewers))
    mask = np.zeros_like(values, dtype=bool)
    for p, r, b in ds.bids:
        values[p, r] = 1.0 if b in ("yes", "maybe") else 0.0
        mask[p, r] = True
    return values, mask


def scorize(ds: BidDataset):
    """yes -> 1, maybe -> 0.5, no -> 0.01; unobserved -> 0 with mask False."""
    levels = {"yes": 1.0, "maybe": 0.5, "no": 0.01}
    values = np.zeros((ds.n_papers, ds.n_reviewers))
    mask = np.zeros_like(values, dtype=bool)
    for p, r, b in ds.bids:
        values[p, r] = levels[b]
        mask[p, r] = True
    return values, mask


def split_train_test(mask, test_fraction, seed=0, group_ids=None):
    """Disjoint train/test masks over the observed pairs.

    With ``group_ids`` (per paper) the split is stratified so every group
    contributes its share of test pairs.
    """
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    mask = np.asarray(mask, dtype=bool)
    test = np.zeros_like(mask)
    if group_ids is None:
        strata = [np.flatnonzero(mask.reshape(-1))]
    else:
        gids = np.asarray(group_ids, int)
        flat_groups = np.repeat(gids, mask.shape[1])
        obs = mask.reshape(-1)
        strata = [np.flatnonzero(obs & (flat_groups == g)) for g in np.unique(gids)]
    flat_test = np.zeros(mask.size, dtype=bool)
    for idx in strata:
        if idx.size == 0:
            raise ValueError("empty stratum in train/test split")
        n_test = int(round(test_fraction * idx.size))
        chosen = rng.choice(idx, size=n_test, replace=False) if n_test else []
        flat_test[list(chosen)] = True
    test = flat_test.reshape(mask.shape)
    train = mask & ~test
    return train, test


@dataclass(frozen=True)
class FactorModel:
    """Serialized factorization state shared by the two pair models."""

    X: np.ndarray
    Y: np.ndarray
    kind: str  # "logistic" | "gaussian_pairs"
    noise_variance: float | None = None

    @property
    def n_factors(self):
        return self.X.shape[1]

    def to_dict(self):
        return {
            "kind": self.kind,
            "d": self.n_factors,
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            np.asarray(doc["X"], float),
            np.asarray(doc["Y"], float),
            doc["kind"],
            doc.get("noise_variance"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _sgd_factorize(values, mask, n_factors, learning_rate, epochs, l2, batch_size, seed, logistic):
    """Minibatch SGD on the masked loss; deterministic under the seed."""
    n, m = values.shape
    rng = np.random.default_rng(seed)
    X = 0.1 * rng.standard_normal((n, n_factors))
    Y = 0.1 * rng.standard_normal((m, n_factors))
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("no observed pairs to fit")
    targets = values[rows, cols]
    order = np.arange(rows.size)
    last_loss = np.inf
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, order.size, batch_size):
            batch = order[start : start + batch_size]
            r, c = rows[batch], cols[batch]
            pred = np.sum(X[r] * Y[c], axis=1)
            if logistic:
                pred = 1.0 / (1.0 + np.exp(-pred))
            err = pred - targets[batch]  # d(loss)/d(score) for both losses
            gx = err[:, None] * Y[c] + l2 * X[r]
            gy = err[:, None] * X[r] + l2 * Y[c]
            np.add.at(X, r, -learning_rate * gx)
            np.add.at(Y, c, -learning_rate * gy)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise FloatingPointError("matrix factorization diverged (non-finite factors)")
    scores = np.sum(X[rows] * Y[cols], axis=1)
    if logistic:
        probs = 1.0 / (1.0 + np.exp(-scores))
        probs = np.clip(probs, 1e-12, 1 - 1e-12)
        last_loss = float(np.mean(-targets * np.log(probs) - (1 - targets) * np.log(1 - probs)))
    else:
        last_loss = float(np.mean((scores - targets) ** 2))
    return X, Y, last_loss


class LogisticMatrixFactorization(BaseEstimator):
    """Masked binary cross-entropy factorization, predicting sigma(X Y')."""

    def __init__(self, n_factors=20, learning_rate=0.05, epochs=200, l2=1e-4, batch_size=256, seed=0):
        self.n_factors = n_factors
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, values, mask):
        values = np.asarray(values, float)
        labels = np.unique(values[np.asarray(mask, bool)])
        if not np.all(np.isin(labels, (0.0, 1.0))):
            raise ValueError("logistic factorization expects binary labels")
        self.X_, self.Y_, self.train_loss_ = _sgd_factorize(
            values, np.asarray(mask, bool), self.n_factors, self.learning_rate, self.epochs, self.l2, self.batch_size, self.seed, logistic=True
        )
        return self

    def predict_proba(self):
        scores = self.X_ @ self.Y_.T
        return np.clip(1.0 / (1.0 + np.exp(-scores)), 1e-6, 1 - 1e-6)

    def to_distribution(self) -> Bernoulli:
        return Bernoulli(self.predict_proba().reshape(-1))

    def to_factor_model(self) -> FactorModel:
        return FactorModel(self.X_, self.Y_, "logistic")


class GaussianPairsModel(BaseEstimator):
    """Squared-error factorization with a residual-calibrated noise variance.

    Predicts a per-pair Gaussian: mean from the factorization, variance from
    held-out calibration residuals (optionally rescaled per reviewer).
    """

    def __init__(
        self,
        n_factors=20,
        learning_rate=0.05,
        epochs=200,
        l2=1e-4,
        batch_size=256,
        calibration_fraction=0.1,
        per_reviewer_scale=False,
        seed=0,
    ):
        self.n_factors = n_factors
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.batch_size = batch_size
        self.calibration_fraction = calibration_fraction
        self.per_reviewer_scale = per_reviewer_scale
        self.seed = seed

    def fit(self, values, mask):
        values = np.asarray(values, float)
        mask = np.asarray(mask, bool)
        train_mask, calib_mask = split_train_test(mask, self.calibration_fraction, seed=self.seed + 1)
        if not calib_mask.any():
            train_mask, calib_mask = mask, mask
        self.X_, self.Y_, self.train_loss_ = _sgd_factorize(
            values, train_mask, self.n_factors, self.learning_rate, self.epochs, self.l2, self.batch_size, self.seed, logistic=False
        )
        pred = self.X_ @ self.Y_.T
        resid = (values - pred)[calib_mask]
        self.noise_variance_ = float(np.mean(resid**2))
        if self.per_reviewer_scale:
            scale = np.ones(values.shape[1])
            for r in range(values.shape[1]):
                rr = (values - pred)[calib_mask[:, r], r] if calib_mask[:, r].any() else None
                if rr is not None and rr.size >= 3:
                    scale[r] = np.mean(rr**2) / max(self.noise_variance_, 1e-12)
            self.reviewer_scale_ = scale
        else:
            self.reviewer_scale_ = np.ones(values.shape[1])
        return self

    def predict(self):
        return self.X_ @ self.Y_.T

    def to_distribution(self) -> Gaussian:
        mean = np.clip(self.predict(), 0.0, None).reshape(-1)
        var = (self.noise_variance_ * np.tile(self.reviewer_scale_, self.X_.shape[0])).reshape(-1)
        return Gaussian(mean, var)

    def to_factor_model(self) -> FactorModel:
        return FactorModel(self.X_, self.Y_, "gaussian_pairs", self.noise_variance_)


class BalancedSpectralClustering(BaseEstimator):
    """Spectral embedding of the paper-reviewer bid graph plus constrained Lloyd.

    The bipartite score graph (inter-paper and inter-reviewer weights zero,
    unknown bids zero) is embedded with the leading eigenvectors of the
    symmetrically normalized adjacency, then clustered by Lloyd's algorithm
    whose assignment step solves a transportation LP enforcing per-cluster
    lower bounds on both papers and reviewers.
    """

    def __init__(self, n_clusters=4, embed_dim=5, min_papers=1, min_reviewers=1, max_iter=50, seed=0):
        self.n_clusters = n_clusters
        self.embed_dim = embed_dim
        self.min_papers = min_papers
        self.min_reviewers = min_reviewers
        self.max_iter = max_iter
        self.seed = seed

    def fit_predict(self, scores):
        scores = np.asarray(scores, float)
        n, m = scores.shape
        if self.n_clusters * self.min_papers > n or self.n_clusters * self.min_reviewers > m:
            raise ValueError("per-cluster lower bounds exceed the number of papers or reviewers")
        W = np.zeros((n + m, n + m))
        W[:n, n:] = scores
        W[n:, :n] = scores.T
        deg = W.sum(axis=1)
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        M = W * inv_sqrt[:, None] * inv_sqrt[None, :]
        # shift by +I: same eigenvectors, but the bipartite -lambda mirror
        # vectors (which separate the two sides) stop dominating by magnitude
        M[np.diag_indices_from(M)] += 1.0
        emb = _orthogonal_iteration(M, self.embed_dim, seed=self.seed)
        labels = self._constrained_lloyd(emb, n)
        self.paper_labels_ = labels[:n]
        self.reviewer_labels_ = labels[n:]
        return self.paper_labels_, self.reviewer_labels_

    def _constrained_lloyd(self, emb, n_papers):
        rng = np.random.default_rng(self.seed)
        total = emb.shape[0]
        centers = emb[rng.choice(total, size=self.n_clusters, replace=False)]
        labels = np.full(total, -1)
        for _ in range(self.max_iter):
            cost = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = _assignment_lp(cost, n_papers, self.min_papers, self.min_reviewers)
            self._audit_bounds(new_labels, n_papers)  # every assignment step must respect the bounds
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(self.n_clusters):
                members = emb[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        return labels

    def _audit_bounds(self, labels, n_papers):
        for c in range(self.n_clusters):
            if (labels[:n_papers] == c).sum() < self.min_papers:
                raise AssertionError(f"cluster {c} violates the paper lower bound")
            if (labels[n_papers:] == c).sum() < self.min_reviewers:
                raise AssertionError(f"cluster {c} violates the reviewer lower bound")


def _orthogonal_iteration(M, k, seed=0, tol=1e-6, max_iter=500):
    """Leading-k eigenvector basis of a symmetric matrix by QR iteration."""
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((M.shape[0], k)))[0]
    for _ in range(max_iter):
        Z = M @ Q
        Q_new, _ = np.linalg.qr(Z)
        # subspace change, sign-invariant
        delta = np.abs(np.abs(Q_new.T @ Q) - np.eye(k)).max()
        Q = Q_new
        if delta < tol:
            break
    return Q


def _assignment_lp(cost, n_papers, min_papers, min_reviewers):
    """Point-to-cluster assignment minimizing cost under per-cluster lower
    bounds on each side; the LP relaxation is integral (network structure)."""
    total, k = cost.shape
    nv = total * k
    rows, senses, rhs = [], [], []
    import scipy.sparse as sp

    data, ri, ci = [], [], []
    for p in range(total):
        for c in range(k):
            ri.append(p)
            ci.append(p * k + c)
            data.append(1.0)
    rows.append(sp.csr_matrix((data, (ri, ci)), shape=(total, nv)))
    senses += ["="] * total
    rhs += [1.0] * total
    for side, lo in ((range(0, n_papers), min_papers), (range(n_papers, total), min_reviewers)):
        side = list(side)
        data, ri, ci = [], [], []
        for c in range(k):
            for p in side:
                ri.append(c)
                ci.append(p * k + c)
                data.append(1.0)
        rows.append(sp.csr_matrix((data, (ri, ci)), shape=(k, nv)))
        senses += [">="] * k
        rhs += [float(lo)] * k
    A = sp.vstack(rows).tocsr()
    sol = solve_lp(
        LinearProgram(-cost.reshape(-1), A, senses, np.asarray(rhs), lower=np.zeros(nv), upper=np.ones(nv))
    )
    if not sol.optimal:
        raise ValueError(f"assignment LP failed: {sol.status}")
    z = sol.x.reshape(total, k)
    return np.argmax(z, axis=1)
