"""Compiled inner loops.

Every kernel takes an explicit ``numpy.random.Generator`` so results are a
deterministic function of the caller's stream.  Nothing here validates its
inputs; the public wrappers in the other modules do that.
"""

import math

import numba
import numpy as np

_JIT = dict(cache=True)

LAW_GAUSS = 0
LAW_LAPLACE = 1
LAW_STUDENT = 2


# ---------------------------------------------------------------------------
# scalar variates
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def _gig_psi(x, alpha, lam):
    return -alpha * (math.cosh(x) - 1.0) - lam * (math.exp(x) - x - 1.0)


@numba.njit(**_JIT)
def _gig_dpsi(x, alpha, lam):
    return -alpha * math.sinh(x) - lam * (math.exp(x) - 1.0)


@numba.njit(**_JIT)
def gig_standard(lam, omega, rng):
    """Devroye's sampler for density ~ x^(lam-1) exp(-omega (x + 1/x) / 2), lam >= 0."""
    alpha = math.sqrt(omega * omega + lam * lam) - lam

    x = -_gig_psi(1.0, alpha, lam)
    if 0.5 <= x <= 2.0:
        t = 1.0
    elif x > 2.0:
        t = math.sqrt(2.0 / (alpha + lam))
    else:
        t = math.log(4.0 / (alpha + 2.0 * lam))

    x = -_gig_psi(-1.0, alpha, lam)
    if 0.5 <= x <= 2.0:
        s = 1.0
    elif x > 2.0:
        s = math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
    else:
        s = math.log(1.0 + 1.0 / alpha + math.sqrt(1.0 / (alpha * alpha) + 2.0 / alpha))
        if lam > 0.0:
            s = min(1.0 / lam, s)

    eta = -_gig_psi(t, alpha, lam)
    zeta = -_gig_dpsi(t, alpha, lam)
    theta = -_gig_psi(-s, alpha, lam)
    xi = _gig_dpsi(-s, alpha, lam)
    p = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd
    total = p + q + r

    while True:
        u = rng.random()
        v = rng.random()
        w = rng.random()
        if u < q / total:
            xx = -sd + q * v
        elif u < (q + r) / total:
            xx = td - r * math.log(v)
        else:
            xx = -sd + p * math.log(v)
        if xx > td:
            chi = math.exp(-eta - zeta * (xx - t))
        elif xx < -sd:
            chi = math.exp(-theta + xi * (xx + s))
        else:
            chi = 1.0
        if w * chi <= math.exp(_gig_psi(xx, alpha, lam)):
            break
    ratio = lam / omega
    return (ratio + math.sqrt(1.0 + ratio * ratio)) * math.exp(xx)


@numba.njit(**_JIT)
def gig(a, b, p, rng):
    """Draw from GIG(a, b, p), density ~ x^(p-1) exp(-(a x + b / x) / 2)."""
    omega = math.sqrt(a * b)
    scale = math.sqrt(b / a)
    y = gig_standard(abs(p), omega, rng)
    if p < 0.0:
        return scale / y
    return scale * y


@numba.njit(**_JIT)
def inverse_gaussian(mu, shape, rng):
    """Michael-Schucany-Haas draw from the inverse Gaussian IG(mu, shape)."""
    nu = rng.standard_normal()
    y = nu * nu
    root = math.sqrt(mu * mu * y * y + 4.0 * mu * shape * y)
    denom = mu * y + root
    if denom == 0.0:
        x = mu
    else:
        # cancellation-free form of mu + mu^2 y / (2 shape) - mu root / (2 shape)
        x = 4.0 * mu * mu * shape * y / (denom * denom)
    if rng.random() <= mu / (mu + x):
        return x
    return mu * mu / x


@numba.njit(**_JIT)
def gig_half_precision(a, c, rng):
    """Return 1/z for z ~ GIG(a, c, 1/2).

    Uses 1/z ~ IG(sqrt(a/c), a); at c == 0 the law is Gamma(1/2, rate a/2).
    """
    if c <= 0.0:
        z = 2.0 * rng.standard_gamma(0.5) / a
        return 1.0 / z
    return inverse_gaussian(math.sqrt(a / c), a, rng)


@numba.njit(**_JIT)
def gig_array(a, b, p, n, rng):
    out = np.empty(n)
    for i in range(n):
        out[i] = gig(a, b, p, rng)
    return out


# ---------------------------------------------------------------------------
# GLM sampler with tridiagonal precision (diagonal data term)
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def tridiag_draw(dprec, w, shift, z, out):
    """Sample N(Q^-1 shift, Q^-1) for Q = diag(dprec) + D^T diag(w) D.

    ``z`` holds standard normals; with z = 0 the mean is returned.  The
    Cholesky recursion is written in remainder form so that very large
    jump precisions do not cancel catastrophically.
    """
    d = dprec.shape[0]
    ell = np.empty(d)
    sub = np.empty(d)
    rho = dprec[0] + w[0]
    for k in range(d):
        wn = w[k + 1] if k + 1 < d else 0.0
        ell[k] = math.sqrt(rho + wn)
        if k + 1 < d:
            sub[k] = -wn / ell[k]
            rho = dprec[k + 1] + wn * rho / (wn + rho)
    v = np.empty(d)
    v[0] = shift[0] / ell[0]
    for k in range(1, d):
        v[k] = (shift[k] - sub[k - 1] * v[k - 1]) / ell[k]
    for k in range(d):
        v[k] += z[k]
    out[d - 1] = v[d - 1] / ell[d - 1]
    for k in range(d - 2, -1, -1):
        out[k] = (v[k] - sub[k] * out[k + 1]) / ell[k]


@numba.njit(**_JIT)
def jump_precisions(law, param, x, w, rng):
    """Latent step for the jump factors: w[k] = 1 / sigma_k^2(z_k)."""
    d = x.shape[0]
    prev = 0.0
    for k in range(d):
        s = x[k] - prev
        prev = x[k]
        if law == LAW_GAUSS:
            w[k] = 1.0 / param
        elif law == LAW_LAPLACE:
            w[k] = gig_half_precision(1.0 / (param * param), s * s, rng)
        else:
            w[k] = rng.standard_gamma(0.5 * (param + 1.0)) / (0.5 * (param + s * s))


@numba.njit(**_JIT)
def glm_tridiag_chain(law, param, dprec, shift, x0, n_burn, n_keep, thin, rng):
    """Run one GLM Gibbs chain per row of ``x0``; returns (n, n_keep, d)."""
    n, d = x0.shape
    out = np.empty((n, n_keep, d))
    w = np.empty(d)
    z = np.empty(d)
    x = np.empty(d)
    total = n_burn + n_keep * thin
    for c in range(n):
        for k in range(d):
            x[k] = x0[c, k]
        kept = 0
        for it in range(total):
            jump_precisions(law, param, x, w, rng)
            for k in range(d):
                z[k] = rng.standard_normal()
            tridiag_draw(dprec, w, shift[c], z, x)
            if it >= n_burn and (it - n_burn) % thin == thin - 1:
                for k in range(d):
                    out[c, kept, k] = x[k]
                kept += 1
    return out


# ---------------------------------------------------------------------------
# GLM sampler with dense precision (general forward operator)
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def _forward_sub(ell, b, out):
    n = b.shape[0]
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= ell[i, j] * out[j]
        out[i] = acc / ell[i, i]


@numba.njit(**_JIT)
def _backward_sub_t(ell, b, out):
    # solves ell^T out = b
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= ell[j, i] * out[j]
        out[i] = acc / ell[i, i]


@numba.njit(**_JIT)
def glm_dense_chain(law, param, data_prec, shift, x0, n_burn, n_keep, thin, rng):
    """GLM chain for precision data_prec + D^T diag(w) D with dense data_prec."""
    d = x0.shape[0]
    out = np.empty((n_keep, d))
    w = np.empty(d)
    x = x0.copy()
    v = np.empty(d)
    z = np.empty(d)
    q = np.empty((d, d))
    total = n_burn + n_keep * thin
    kept = 0
    for it in range(total):
        jump_precisions(law, param, x, w, rng)
        for i in range(d):
            for j in range(d):
                q[i, j] = data_prec[i, j]
        for k in range(d):
            q[k, k] += w[k]
            if k + 1 < d:
                q[k, k] += w[k + 1]
                q[k, k + 1] -= w[k + 1]
                q[k + 1, k] -= w[k + 1]
        ell = np.linalg.cholesky(q)
        _forward_sub(ell, shift, v)
        for k in range(d):
            z[k] = v[k] + rng.standard_normal()
        _backward_sub_t(ell, z, x)
        if it >= n_burn and (it - n_burn) % thin == thin - 1:
            out[kept] = x
            kept += 1
    return out


# ---------------------------------------------------------------------------
# Bernoulli-Laplace sampler, dense Woodbury form (general forward operator)
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def chol_rank_one(ell, vec, sign):
    """In-place rank-one update (sign=+1) or downdate (sign=-1) of a Cholesky factor.

    ``vec`` is overwritten.  Returns False if a downdate loses definiteness.
    """
    n = vec.shape[0]
    for k in range(n):
        lkk = ell[k, k]
        r2 = lkk * lkk + sign * vec[k] * vec[k]
        if r2 <= 0.0:
            return False
        r = math.sqrt(r2)
        c = r / lkk
        s = vec[k] / lkk
        ell[k, k] = r
        for i in range(k + 1, n):
            ell[i, k] = (ell[i, k] + sign * s * vec[i]) / c
            vec[i] = c * vec[i] - s * ell[i, k]
    return True


@numba.njit(**_JIT)
def bl_logodds_dense(ell, zy, h, w_k, v_k, prior_logodds, g):
    """Log-odds of bit k being on, from the factor of the *current* B.

    Returns (delta, tau0, q0) where tau0 and q0 are h^T B0^-1 h and
    h^T B0^-1 y for the state with bit k off.  ``g`` is scratch space that
    receives L^-1 h.
    """
    _forward_sub(ell, h, g)
    tau = 0.0
    qv = 0.0
    for i in range(g.shape[0]):
        tau += g[i] * g[i]
        qv += g[i] * zy[i]
    if v_k:
        tau0 = tau / (1.0 - w_k * tau)
        q0 = qv * (1.0 + w_k * tau0)
    else:
        tau0 = tau
        q0 = qv
    one = 1.0 + w_k * tau0
    delta = prior_logodds - 0.5 * math.log(one) + 0.5 * w_k * q0 * q0 / one
    return delta, tau0, q0


@numba.njit(**_JIT)
def bl_refactor(h_mat, y, sigma2, v, w):
    m, d = h_mat.shape
    bmat = np.zeros((m, m))
    for i in range(m):
        bmat[i, i] = sigma2
    for k in range(d):
        if v[k]:
            for i in range(m):
                hik = w[k] * h_mat[i, k]
                for j in range(m):
                    bmat[i, j] += hik * h_mat[j, k]
    ell = np.linalg.cholesky(bmat)
    zy = np.empty(m)
    _forward_sub(ell, y, zy)
    logdet = 0.0
    quad = 0.0
    for i in range(m):
        logdet += 2.0 * math.log(ell[i, i])
        quad += zy[i] * zy[i]
    return ell, zy, logdet, quad


@numba.njit(**_JIT)
def bl_apply_flip(ell, zy, y, h, w_k, turn_on, tau0, q0, logdet, quad):
    """Flip one bit: rank-one factor update plus the scalar updates of log|B| and y^T B^-1 y."""
    m = h.shape[0]
    vec = np.empty(m)
    sw = math.sqrt(w_k)
    for i in range(m):
        vec[i] = sw * h[i]
    one = 1.0 + w_k * tau0
    if turn_on:
        ok = chol_rank_one(ell, vec, 1.0)
        logdet += math.log(one)
        quad -= w_k * q0 * q0 / one
    else:
        ok = chol_rank_one(ell, vec, -1.0)
        logdet -= math.log(one)
        quad += w_k * q0 * q0 / one
    _forward_sub(ell, y, zy)
    return ok, logdet, quad


@numba.njit(**_JIT)
def bl_draw_w(v, u, b, w, rng):
    d = v.shape[0]
    b2 = b * b
    for k in range(d):
        if v[k]:
            w[k] = 1.0 / gig_half_precision(b2, u[k] * u[k], rng)
        else:
            w[k] = rng.standard_exponential() * 2.0 / b2


@numba.njit(**_JIT)
def bl_dense_chain(zero_prob, b, h_mat, y, sigma2, u0, n_burn, n_keep, thin, rng):
    """Partially collapsed Gibbs sampler for Bernoulli-Laplace jumps, general H = A D^-1.

    Returns (signals, increments, support) of shape (n_keep, d) each.
    """
    m, d = h_mat.shape
    sigma = math.sqrt(sigma2)
    if zero_prob <= 0.0:
        prior_logodds = np.inf
    elif zero_prob >= 1.0:
        prior_logodds = -np.inf
    else:
        prior_logodds = math.log((1.0 - zero_prob) / zero_prob)
    u = u0.copy()
    v = np.empty(d, dtype=np.bool_)
    for k in range(d):
        v[k] = u[k] != 0.0
    w = np.empty(d)
    g = np.empty(m)
    hk = np.empty(m)
    r = np.empty(m)
    tmp = np.empty(m)
    sol = np.empty(m)
    out_x = np.empty((n_keep, d))
    out_u = np.empty((n_keep, d))
    out_v = np.empty((n_keep, d), dtype=np.bool_)
    total = n_burn + n_keep * thin
    kept = 0
    for it in range(total):
        bl_draw_w(v, u, b, w, rng)
        ell, zy, logdet, quad = bl_refactor(h_mat, y, sigma2, v, w)
        for k in range(d):
            for i in range(m):
                hk[i] = h_mat[i, k]
            delta, tau0, q0 = bl_logodds_dense(ell, zy, hk, w[k], v[k], prior_logodds, g)
            if delta >= 0.0:
                p_on = 1.0 / (1.0 + math.exp(-delta))
            else:
                e = math.exp(delta)
                p_on = e / (1.0 + e)
            new = rng.random() < p_on
            if new != v[k]:
                ok, logdet, quad = bl_apply_flip(ell, zy, y, hk, w[k], new, tau0, q0, logdet, quad)
                v[k] = new
                if not ok:
                    ell, zy, logdet, quad = bl_refactor(h_mat, y, sigma2, v, w)
        # u | v, w, y by perturbation: prior draw corrected through B^-1
        for k in range(d):
            if v[k]:
                u[k] = math.sqrt(w[k]) * rng.standard_normal()
            else:
                u[k] = 0.0
        for i in range(m):
            acc = y[i] - sigma * rng.standard_normal()
            for k in range(d):
                if v[k]:
                    acc -= h_mat[i, k] * u[k]
            r[i] = acc
        _forward_sub(ell, r, tmp)
        _backward_sub_t(ell, tmp, sol)
        for k in range(d):
            if v[k]:
                acc = 0.0
                for i in range(m):
                    acc += h_mat[i, k] * sol[i]
                u[k] += w[k] * acc
        if it >= n_burn and (it - n_burn) % thin == thin - 1:
            acc = 0.0
            for k in range(d):
                acc += u[k]
                out_x[kept, k] = acc
                out_u[kept, k] = u[k]
                out_v[kept, k] = v[k]
            kept += 1
    return out_x, out_u, out_v


# ---------------------------------------------------------------------------
# Bernoulli-Laplace sampler, state-space form (diagonal data term)
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def _gauss_message_loglik(var, jj, hh, m):
    """log of E[exp(-jj x^2 / 2 + hh x)] for x ~ N(m, var), up to constants shared by both bit states."""
    one = 1.0 + var * jj
    return -0.5 * math.log(one) + (var * hh * hh + 2.0 * hh * m - jj * m * m) / (2.0 * one)


@numba.njit(**_JIT)
def bl_statespace_sweep(v, w, obs_prec, obs_info, prior_logodds, rng, fm, fp, bj, bh, deltas):
    """One sequential support sweep for x_k = x_{k-1} + u_k observed through a diagonal operator.

    Fills the filtered moments ``fm``/``fp`` for the new support and the
    log-odds ``deltas`` used at each site.  The log-odds equal those of the
    dense Woodbury form exactly (both are ratios of the same Gaussian
    marginal likelihood).
    """
    d = v.shape[0]
    jj = 0.0
    hh = 0.0
    for k in range(d - 1, -1, -1):
        if k < d - 1:
            qn = w[k + 1] if v[k + 1] else 0.0
            one = 1.0 + qn * jj
            jj = jj / one
            hh = hh / one
        jj += obs_prec[k]
        hh += obs_info[k]
        bj[k] = jj
        bh[k] = hh
    m = 0.0
    p = 0.0
    for k in range(d):
        base = _gauss_message_loglik(p, bj[k], bh[k], m)
        on = _gauss_message_loglik(p + w[k], bj[k], bh[k], m)
        delta = prior_logodds + on - base
        deltas[k] = delta
        if rng is not None:
            if delta >= 0.0:
                p_on = 1.0 / (1.0 + math.exp(-delta))
            else:
                e = math.exp(delta)
                p_on = e / (1.0 + e)
            v[k] = rng.random() < p_on
        var = p + (w[k] if v[k] else 0.0)
        if obs_prec[k] > 0.0 and var > 0.0:
            prec = 1.0 / var + obs_prec[k]
            m = (m / var + obs_info[k]) / prec
            p = 1.0 / prec
        else:
            p = var
        fm[k] = m
        fp[k] = p


@numba.njit(**_JIT)
def bl_statespace_backward(v, w, fm, fp, x, u, rng):
    d = v.shape[0]
    x[d - 1] = fm[d - 1] + math.sqrt(fp[d - 1]) * rng.standard_normal()
    for k in range(d - 2, -1, -1):
        if not v[k + 1]:
            x[k] = x[k + 1]
        elif fp[k] == 0.0:
            x[k] = fm[k]
        else:
            qn = w[k + 1]
            prec = 1.0 / fp[k] + 1.0 / qn
            mean = (fm[k] / fp[k] + x[k + 1] / qn) / prec
            x[k] = mean + rng.standard_normal() / math.sqrt(prec)
    for k in range(d):
        if not v[k]:
            u[k] = 0.0
        elif k == 0:
            u[k] = x[0]
        else:
            u[k] = x[k] - x[k - 1]


@numba.njit(**_JIT)
def bl_statespace_chain(zero_prob, b, obs_prec, obs_info, u0, n_burn, n_keep, thin, rng):
    """Bernoulli-Laplace chains for a diagonal data term; one chain per row of ``u0``.

    ``obs_info`` is (n, d), one row per chain.  Returns signals, increments
    and supports, each (n, n_keep, d).
    """
    n, d = u0.shape
    if zero_prob <= 0.0:
        prior_logodds = np.inf
    elif zero_prob >= 1.0:
        prior_logodds = -np.inf
    else:
        prior_logodds = math.log((1.0 - zero_prob) / zero_prob)
    out_x = np.empty((n, n_keep, d))
    out_u = np.empty((n, n_keep, d))
    out_v = np.empty((n, n_keep, d), dtype=np.bool_)
    v = np.empty(d, dtype=np.bool_)
    w = np.empty(d)
    u = np.empty(d)
    x = np.empty(d)
    fm = np.empty(d)
    fp = np.empty(d)
    bj = np.empty(d)
    bh = np.empty(d)
    deltas = np.empty(d)
    total = n_burn + n_keep * thin
    for c in range(n):
        for k in range(d):
            u[k] = u0[c, k]
            v[k] = u[k] != 0.0
        kept = 0
        for it in range(total):
            bl_draw_w(v, u, b, w, rng)
            bl_statespace_sweep(v, w, obs_prec, obs_info[c], prior_logodds, rng, fm, fp, bj, bh, deltas)
            bl_statespace_backward(v, w, fm, fp, x, u, rng)
            if it >= n_burn and (it - n_burn) % thin == thin - 1:
                for k in range(d):
                    out_x[c, kept, k] = x[k]
                    out_u[c, kept, k] = u[k]
                    out_v[c, kept, k] = v[k]
                kept += 1
    return out_x, out_u, out_v


# ---------------------------------------------------------------------------
# lasso in increment coordinates (l1 baseline)
# ---------------------------------------------------------------------------


@numba.njit(**_JIT)
def lasso_gap(h, y, lam, u):
    """Primal objective and duality gap for 0.5 ||H u - y||^2 + lam ||u||_1.

    The residual is formed explicitly; the Gram-form expansion of its norm
    cancels catastrophically when ``H`` is ill-conditioned.
    """
    r = y - h @ u
    corr = h.T @ r
    gmax = 0.0
    l1 = 0.0
    for i in range(u.shape[0]):
        l1 += abs(u[i])
        if abs(corr[i]) > gmax:
            gmax = abs(corr[i])
    rr = r @ r
    yr = y @ r
    primal = 0.5 * rr + lam * l1
    scale = 1.0
    if gmax > lam:
        scale = lam / gmax
    dual = scale * yr - 0.5 * scale * scale * rr
    return primal, primal - dual


@numba.njit(**_JIT)
def _lasso_primal(h, y, lam, u):
    r = y - h @ u
    return 0.5 * (r @ r) + lam * np.abs(u).sum()


@numba.njit(**_JIT)
def _lasso_newton(h, y, gram, c, lam, u, primal):
    """Newton step on the current sign pattern, clipped at the first sign change.

    Inside one orthant the objective is quadratic, so moving towards its
    minimizer never increases it before a coordinate crosses zero.  Returns
    the candidate and its objective; the caller keeps whichever is lower.
    """
    d = u.shape[0]
    n_act = 0
    for i in range(d):
        if u[i] != 0.0:
            n_act += 1
    if n_act == 0:
        return u.copy(), primal
    idx = np.empty(n_act, dtype=np.int64)
    n_act = 0
    for i in range(d):
        if u[i] != 0.0:
            idx[n_act] = i
            n_act += 1
    g = np.empty((n_act, n_act))
    rhs = np.empty(n_act)
    for a in range(n_act):
        ia = idx[a]
        rhs[a] = c[ia] - lam * (1.0 if u[ia] > 0.0 else -1.0)
        for b in range(n_act):
            g[a, b] = gram[ia, idx[b]]
    target = np.linalg.lstsq(g, rhs)[0]
    step = 1.0
    for a in range(n_act):
        ua = u[idx[a]]
        if ua * target[a] < 0.0:
            frac = ua / (ua - target[a])
            if frac < step:
                step = frac
    cand = u.copy()
    for a in range(n_act):
        ia = idx[a]
        val = u[ia] + step * (target[a] - u[ia])
        if u[ia] * val <= 0.0:
            val = 0.0
        cand[ia] = val
    return cand, _lasso_primal(h, y, lam, cand)


@numba.njit(**_JIT)
def lasso_cd(h, y, gram, c, lam, u0, tol, max_sweeps, polish_every=10):
    """Cyclic coordinate descent with active-set Newton polishing and a duality-gap stop.

    Returns (u, gap, sweeps).
    """
    d = u0.shape[0]
    u = u0.copy()
    grad = gram @ u - c
    primal, gap = lasso_gap(h, y, lam, u)
    sweeps = 0
    while gap > tol and sweeps < max_sweeps:
        for j in range(d):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = gjj * u[j] - grad[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            diff = new - u[j]
            if diff != 0.0:
                for i in range(d):
                    grad[i] += gram[i, j] * diff
                u[j] = new
        sweeps += 1
        if sweeps % polish_every == 0:
            primal = _lasso_primal(h, y, lam, u)
            cand, cand_val = _lasso_newton(h, y, gram, c, lam, u, primal)
            if cand_val < primal:
                u = cand
                grad = gram @ u - c
        primal, gap = lasso_gap(h, y, lam, u)
    return u, gap, sweeps


@numba.njit(**_JIT)
def _active_solve(gram, idx, n_act, r1, r2):
    g = np.empty((n_act, n_act))
    rhs = np.empty((n_act, 2))
    for a in range(n_act):
        rhs[a, 0] = r1[idx[a]]
        rhs[a, 1] = r2[idx[a]]
        for b in range(n_act):
            g[a, b] = gram[idx[a], idx[b]]
    sol = np.linalg.lstsq(g, rhs)[0]
    # one round of iterative refinement for ill-conditioned active sets
    sol += np.linalg.lstsq(g, rhs - g @ sol)[0]
    return sol


@numba.njit(**_JIT)
def lasso_path(gram, c0, lams, max_steps):
    """Exact lasso homotopy; ``lams`` must be decreasing.

    Tracks the piecewise-affine solution ``u_A(lam) = a - lam b`` of
    ``G_AA u_A = c0_A - lam s_A`` between join and leave events and
    evaluates it at every requested ``lam``.  Returns (solutions, steps).
    """
    d = c0.shape[0]
    n = lams.shape[0]
    out = np.zeros((n, d))
    active = np.zeros(d, dtype=np.bool_)
    sgn = np.zeros(d)
    lam = 0.0
    j0 = -1
    for j in range(d):
        if abs(c0[j]) > lam:
            lam = abs(c0[j])
            j0 = j
    gi = 0
    while gi < n and lams[gi] >= lam:
        gi += 1
    if j0 < 0:
        return out, 0
    active[j0] = True
    sgn[j0] = 1.0 if c0[j0] > 0.0 else -1.0
    idx = np.empty(d, dtype=np.int64)
    just_left = -1
    just_joined = j0
    steps = 0
    while gi < n and steps < max_steps:
        steps += 1
        n_act = 0
        for j in range(d):
            if active[j]:
                idx[n_act] = j
                n_act += 1
        ab = _active_solve(gram, idx, n_act, c0, sgn)
        nxt = 0.0
        event = -1
        joining = False
        new_sign = 0.0
        for j in range(d):
            if active[j] or j == just_left or gram[j, j] <= 0.0:
                continue
            p = c0[j]
            q = 0.0
            for a in range(n_act):
                p -= gram[j, idx[a]] * ab[a, 0]
                q += gram[j, idx[a]] * ab[a, 1]
            if 1.0 - q > 1e-12:
                cand = p / (1.0 - q)
                if nxt < cand < lam:
                    nxt = cand
                    event = j
                    joining = True
                    new_sign = 1.0
            if 1.0 + q > 1e-12:
                cand = -p / (1.0 + q)
                if nxt < cand < lam:
                    nxt = cand
                    event = j
                    joining = True
                    new_sign = -1.0
        for a in range(n_act):
            i = idx[a]
            if i == just_joined or ab[a, 1] == 0.0:
                continue
            cand = ab[a, 0] / ab[a, 1]
            if nxt < cand < lam:
                nxt = cand
                event = i
                joining = False
        while gi < n and lams[gi] > nxt:
            for a in range(n_act):
                out[gi, idx[a]] = ab[a, 0] - lams[gi] * ab[a, 1]
            gi += 1
        if event < 0:
            break
        lam = nxt
        if joining:
            active[event] = True
            sgn[event] = new_sign
            just_joined = event
            just_left = -1
        else:
            active[event] = False
            sgn[event] = 0.0
            just_left = event
            just_joined = -1
    return out, steps
