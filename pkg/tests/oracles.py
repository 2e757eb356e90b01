"""Independent reference computations used to check the library."""

import numpy as np


def logistic_loglik(beta, A, y):
    eta = A @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_gradient(beta, A, y):
    p = 0.5 * (1.0 + np.tanh(0.5 * (A @ beta)))
    return A.T @ (y - p)


def gradient_ascent_logistic(X, y, tol=1e-9, max_iter=200_000):
    """Maximize the logistic log-likelihood (with intercept) by accelerated gradient ascent.

    The step is 1/L with L = lambda_max(A'A)/4, the Lipschitz constant of the
    gradient. Momentum restarts when the step stops pointing uphill.
    """
    A = np.column_stack([np.ones(len(y)), X])
    y = np.asarray(y, dtype=float)
    L = np.linalg.eigvalsh(A.T @ A).max() / 4.0
    beta = np.zeros(A.shape[1])
    z = beta.copy()
    t = 1.0
    for _ in range(max_iter):
        g = logistic_gradient(z, A, y)
        new = z + g / L
        if np.linalg.norm(logistic_gradient(new, A, y)) < tol:
            return new
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if g @ (new - beta) < 0:
            t_next = 1.0
            z = new.copy()
        else:
            z = new + ((t - 1.0) / t_next) * (new - beta)
        beta, t = new, t_next
    return beta


def central_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def direct_vif(X):
    """1 / (1 - R^2) from a normal-equations regression of each column on the rest."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    out = np.empty(p)
    for j in range(p):
        y = X[:, j]
        Z = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef = np.linalg.solve(Z.T @ Z, Z.T @ y)
        rss = np.sum((y - Z @ coef) ** 2)
        tss = np.sum((y - y.mean()) ** 2)
        out[j] = tss / rss
    return out
