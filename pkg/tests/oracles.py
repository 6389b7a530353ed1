"""Reference implementations used only by the tests.

They are deliberately simple and share no code with the package.
"""

import numpy as np
from scipy import integrate, special


def prox_grad_partial_l1(y, X, M, w, iters=5000, tol=0.0):
    """Accelerated proximal gradient (FISTA) on
    (1/2n)||y - M b - X a||^2 + sum w_j |b_j| with a unpenalized."""
    n = y.shape[0]
    Z = np.column_stack([X, M]) if X.shape[1] else M
    q = X.shape[1]
    L = np.linalg.norm(Z, 2) ** 2 / n
    step = 1.0 / L
    thr = np.concatenate([np.zeros(q), np.asarray(w, float)]) * step
    theta = np.zeros(Z.shape[1])
    z = theta.copy()
    t = 1.0
    for _ in range(iters):
        grad = Z.T @ (Z @ z - y) / n
        u = z - step * grad
        new = np.sign(u) * np.maximum(np.abs(u) - thr, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = new + (t - 1) / t_new * (new - theta)
        if tol and np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta, t = new, t_new
    return theta[q:], theta[:q]


def kkt_violation(y, X, M, b, a, w):
    """Largest violation of the partial-L1 optimality conditions."""
    n = y.shape[0]
    r = y - M @ b - (X @ a if X.shape[1] else 0.0)
    g = M.T @ r / n
    act = b != 0
    v_act = np.abs(g[act] - w[act] * np.sign(b[act])) if act.any() else np.zeros(1)
    v_in = np.maximum(np.abs(g[~act]) - w[~act], 0.0) if (~act).any() else np.zeros(1)
    v_x = np.abs(X.T @ r / n) if X.shape[1] else np.zeros(1)
    return float(max(v_act.max(), v_in.max(), v_x.max()))


def ncx2_pdf(x, k, lam):
    if lam == 0:
        return np.exp((k / 2 - 1) * np.log(x) - x / 2 - (k / 2) * np.log(2) - special.gammaln(k / 2))
    # exponentially scaled Bessel keeps the product finite
    z = np.sqrt(lam * x)
    return 0.5 * np.exp(-(x + lam) / 2 + z + (k / 4 - 0.5) * np.log(x / lam)) * special.ive(k / 2 - 1, z)


def ncx2_cdf_quad(x, k, lam):
    """CDF by adaptive quadrature of the density in u = sqrt(x) (removes the x^{-1/2} cusp)."""
    if x <= 0:
        return 0.0
    def f(u):
        # quad never evaluates the endpoint u = 0
        return 2 * u * ncx2_pdf(u * u, k, lam)

    val, _ = integrate.quad(f, 0.0, np.sqrt(x), epsabs=1e-13, epsrel=1e-12, limit=500)
    return val


def soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)
