"""Feedback models mapping sensor-trace deviations to coupling terms, and the
coupling-target extraction from corrected demonstrations.

The phase-modulated network (one per coupling dimension) is

    h_l = tanh(W_l h_{l-1} + b_l)              regular hidden layers (optional)
    m   = G (.) (W_m h_L + b_m)                phase-modulated final hidden layer
    C   = w_out . m                            output, no bias

with G_i = psi_i(p)/sum_j psi_j(p) * u, so C is exactly zero whenever the
phase velocity u is zero and converges to zero with it.  Dropout, when
enabled during training, is applied to regular hidden layers only; masks are
pre-scaled by 1/keep so evaluation needs no rescaling.

The feedforward baseline is a plain tanh MLP with an output bias; phase
variables can be appended to its input but give no convergence guarantee.
"""

from dataclasses import dataclass

import numpy as np

from . import so3
from .canonical import CanonicalParams, PhaseKernelBank, phase_rollout
from .errors import DataError, NumericalError
from .primitives import forcing_term


# ---------------------------------------------------------------------------
# coupling-target extraction

def extract_coupling_target(corrected, prim):
    """Per-sample coupling targets of a corrected demonstration.

    C_target = -alpha*(beta * 2 log(Qg * Q^-1) - tau*omega) + tau^2*omega_dot - f
    with the goal replayed exactly as an unroll of `prim` from the demo's
    start would evolve it, and f evaluated at the sample's phase.
    """
    n = len(corrected)
    dt = corrected.dt
    if corrected.duration > prim.tau * (1.0 + 1e-9):
        raise DataError(
            f"length mismatch: demo spans {corrected.duration:.4f} s but the "
            f"primitive's canonical span is {prim.tau:.4f} s")
    p, u = phase_rollout(CanonicalParams(tau=prim.tau), dt, n - 1)
    steady = prim.resolve_goal(corrected.quat[0])
    g = corrected.quat[0].copy()
    out = np.empty((n, 3))
    for k in range(n):
        err = 2.0 * so3.log_map(so3.compose(g, so3.conjugate(corrected.quat[k])))
        f = forcing_term(p[k], u[k], prim)
        out[k] = (-prim.alpha * (prim.beta * err - prim.tau * corrected.omega[k])
                  + prim.tau**2 * corrected.omega_dot[k] - f)
        omega_g = prim.alpha_goal * 2.0 * so3.log_map(
            so3.compose(steady, so3.conjugate(g))) / prim.tau
        g = so3.integrate(g, omega_g, dt)
    return out


# ---------------------------------------------------------------------------
# phase modulation

def phase_modulation(bank, p, u):
    """Rows of G_i = psi_i(p)/sum_j psi_j(p) * u for vectors p, u."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    psi = np.exp(-bank.widths[None, :] * (p[:, None] - bank.centers[None, :]) ** 2)
    return psi / psi.sum(axis=1, keepdims=True) * u[:, None]


# ---------------------------------------------------------------------------
# PMNN

@dataclass
class PmnnParams:
    """Weights of one phase-modulated network (one coupling dimension)."""

    hidden_weights: list       # L matrices, layer l: (n_l, n_{l-1})
    hidden_biases: list        # L vectors
    mod_weights: np.ndarray    # (N, n_L) or (N, input_dim) when L == 0
    mod_bias: np.ndarray       # (N,)
    out_weights: np.ndarray    # (N,), no output bias
    train_output: bool = True  # frozen output stage for the PCA pipeline model

    @property
    def n_hidden_layers(self):
        return len(self.hidden_weights)

    def parameters(self):
        """Flat parameter list: hidden (W, b) pairs, modulated W, b, output w."""
        params = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            params.extend([w, b])
        params.extend([self.mod_weights, self.mod_bias, self.out_weights])
        return params

    def set_parameters(self, params):
        k = 0
        for i in range(self.n_hidden_layers):
            self.hidden_weights[i] = params[k]
            self.hidden_biases[i] = params[k + 1]
            k += 2
        self.mod_weights, self.mod_bias, self.out_weights = params[k], params[k + 1], params[k + 2]

    def trainable_mask(self):
        mask = [True] * (2 * self.n_hidden_layers + 2)
        mask.append(self.train_output)
        return mask


def init_pmnn(input_dim, hidden, n_kernels, rng, train_output=True):
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.

    The output weights start at one when frozen (PCA pipeline) so the
    modulated stage alone carries the fit.
    """
    sizes = [input_dim] + list(hidden)
    hw, hb = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        hw.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        hb.append(np.zeros(fan_out))
    bound = np.sqrt(6.0 / (sizes[-1] + n_kernels))
    mod_w = rng.uniform(-bound, bound, size=(n_kernels, sizes[-1]))
    mod_b = np.zeros(n_kernels)
    if train_output:
        bound = np.sqrt(6.0 / (n_kernels + 1))
        out_w = rng.uniform(-bound, bound, size=n_kernels)
    else:
        out_w = np.ones(n_kernels)
    return PmnnParams(hw, hb, mod_w, mod_b, out_w, train_output=train_output)


def make_dropout_masks(net, batch_size, rate, rng):
    """Inverted-dropout masks (values 0 or 1/keep) for the regular layers."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return [(rng.random((batch_size, w.shape[0])) < keep) / keep
            for w in net.hidden_weights]


def _pmnn_hidden(net, x, masks):
    h = np.atleast_2d(np.asarray(x, dtype=float))
    cache = []
    for l, (w, b) in enumerate(zip(net.hidden_weights, net.hidden_biases)):
        a = np.tanh(h @ w.T + b)
        mask = None if masks is None else masks[l]
        cache.append((h, a, mask))
        h = a if mask is None else a * mask
    return h, cache


def pmnn_forward(net, x, p, u, bank, masks=None):
    """Batch forward pass; scalars in give a scalar out."""
    scalar = np.ndim(x) == 1
    h, _ = _pmnn_hidden(net, x, masks)
    pre = h @ net.mod_weights.T + net.mod_bias
    m = phase_modulation(bank, p, u) * pre
    c = m @ net.out_weights
    return float(c[0]) if scalar else c


def pmnn_gradient(net, x, p, u, target, bank, masks=None):
    """Loss 0.5*mean((C - target)^2) and its exact parameter gradients.

    Returns (loss, grads) with grads ordered like net.parameters().
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    batch = x.shape[0]
    if batch == 0:
        raise DataError("empty batch")
    h, cache = _pmnn_hidden(net, x, masks)
    g = phase_modulation(bank, p, u)
    pre = h @ net.mod_weights.T + net.mod_bias
    m = g * pre
    c = m @ net.out_weights
    err = c - target
    loss = 0.5 * float(np.mean(err**2))

    dc = err / batch
    d_out = m.T @ dc
    dm = np.outer(dc, net.out_weights)
    dpre = dm * g
    d_mod_w = dpre.T @ h
    d_mod_b = dpre.sum(axis=0)
    dh = dpre @ net.mod_weights
    grads_hidden = []
    for l in range(net.n_hidden_layers - 1, -1, -1):
        inp, act, mask = cache[l]
        if mask is not None:
            dh = dh * mask
        dz = dh * (1.0 - act**2)
        grads_hidden.append((dz.T @ inp, dz.sum(axis=0)))
        dh = dz @ net.hidden_weights[l]
    grads = []
    for dw, db in reversed(grads_hidden):
        grads.extend([dw, db])
    grads.extend([d_mod_w, d_mod_b, d_out])
    return loss, grads


# ---------------------------------------------------------------------------
# FFNN baseline

@dataclass
class FfnnParams:
    """Plain tanh MLP with a scalar output and an output bias."""

    hidden_weights: list
    hidden_biases: list
    out_weights: np.ndarray    # (n_last,)
    out_bias: float

    @property
    def n_hidden_layers(self):
        return len(self.hidden_weights)

    def parameters(self):
        params = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            params.extend([w, b])
        params.extend([self.out_weights, np.atleast_1d(np.asarray(self.out_bias, dtype=float))])
        return params

    def set_parameters(self, params):
        k = 0
        for i in range(self.n_hidden_layers):
            self.hidden_weights[i] = params[k]
            self.hidden_biases[i] = params[k + 1]
            k += 2
        self.out_weights = params[k]
        self.out_bias = float(params[k + 1][0])

    def trainable_mask(self):
        return [True] * (2 * self.n_hidden_layers + 2)


def init_ffnn(input_dim, hidden, rng):
    sizes = [input_dim] + list(hidden)
    hw, hb = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        hw.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        hb.append(np.zeros(fan_out))
    bound = np.sqrt(6.0 / (sizes[-1] + 1))
    return FfnnParams(hw, hb, rng.uniform(-bound, bound, size=sizes[-1]), 0.0)


def ffnn_forward(net, x, masks=None):
    scalar = np.ndim(x) == 1
    h = np.atleast_2d(np.asarray(x, dtype=float))
    for l, (w, b) in enumerate(zip(net.hidden_weights, net.hidden_biases)):
        h = np.tanh(h @ w.T + b)
        if masks is not None:
            h = h * masks[l]
    c = h @ net.out_weights + net.out_bias
    return float(c[0]) if scalar else c


def ffnn_gradient(net, x, target, masks=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    batch = x.shape[0]
    if batch == 0:
        raise DataError("empty batch")
    h = x
    cache = []
    for l, (w, b) in enumerate(zip(net.hidden_weights, net.hidden_biases)):
        a = np.tanh(h @ w.T + b)
        mask = None if masks is None else masks[l]
        cache.append((h, a, mask))
        h = a if mask is None else a * mask
    c = h @ net.out_weights + net.out_bias
    err = c - target
    loss = 0.5 * float(np.mean(err**2))
    dc = err / batch
    d_out = h.T @ dc
    d_bias = np.atleast_1d(dc.sum())
    dh = np.outer(dc, net.out_weights)
    grads_hidden = []
    for l in range(net.n_hidden_layers - 1, -1, -1):
        inp, act, mask = cache[l]
        if mask is not None:
            dh = dh * mask
        dz = dh * (1.0 - act**2)
        grads_hidden.append((dz.T @ inp, dz.sum(axis=0)))
        dh = dz @ net.hidden_weights[l]
    grads = []
    for dw, db in reversed(grads_hidden):
        grads.extend([dw, db])
    grads.extend([d_out, d_bias])
    return loss, grads


def ffnn_dropout_masks(net, batch_size, rate, rng):
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return [(rng.random((batch_size, w.shape[0])) < keep) / keep
            for w in net.hidden_weights]


# ---------------------------------------------------------------------------
# PCA

@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray     # (k, d), orthonormal rows

    @property
    def n_components(self):
        return self.components.shape[0]


def pca_fit(data, retained=0.99):
    """Mean-centered projection keeping the fewest components reaching the
    retained-variance fraction."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DataError("PCA needs at least two rows")
    mean = data.mean(axis=0)
    centered = data - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    var = svals**2
    total = var.sum()
    if total <= 0.0:
        raise NumericalError("degenerate data: zero variance in every direction")
    ratios = np.cumsum(var) / total
    k = int(np.searchsorted(ratios, retained - 1e-12)) + 1
    k = min(k, len(svals))
    return PcaProjection(mean=mean, components=vt[:k])


def pca_transform(proj, x):
    return (np.asarray(x, dtype=float) - proj.mean) @ proj.components.T


# ---------------------------------------------------------------------------
# the assembled feedback model

@dataclass
class FeedbackModel:
    """M independent networks plus the input/output normalization they expect.

    kind: "pmnn" (phase-modulated, optionally with regular hidden layers),
    "ffnn" (baseline MLP, optionally fed (p, u)), or "pca_pmnn" (fixed PCA
    features into a frozen-output modulated stage).
    """

    kind: str
    nets: list
    bank: PhaseKernelBank
    input_mean: np.ndarray
    input_std: np.ndarray
    target_scale: np.ndarray          # per output dimension
    coupling_axes: list               # maps output dims onto rotation axes
    pca: PcaProjection = None
    phase_inputs: bool = True         # ffnn only: append (p, u) to the input

    @property
    def n_outputs(self):
        return len(self.nets)

    def _features(self, ds):
        z = (np.atleast_2d(np.asarray(ds, dtype=float)) - self.input_mean) / self.input_std
        if self.pca is not None:
            z = pca_transform(self.pca, z)
        return z

    def predict_batch(self, ds, p, u):
        """(B, M) coupling values for deviation rows ds and phase vectors."""
        z = self._features(ds)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((z.shape[0], self.n_outputs))
        for m, net in enumerate(self.nets):
            if self.kind == "ffnn":
                x = np.hstack([z, p[:, None], u[:, None]]) if self.phase_inputs else z
                out[:, m] = ffnn_forward(net, x)
            else:
                out[:, m] = pmnn_forward(net, z, p, u, self.bank)
            out[:, m] *= self.target_scale[m]
        return out

    def net_inputs(self, ds, p, u):
        """Feature matrix a net of this model consumes (training helper)."""
        z = self._features(ds)
        if self.kind == "ffnn" and self.phase_inputs:
            p = np.atleast_1d(np.asarray(p, dtype=float))
            u = np.atleast_1d(np.asarray(u, dtype=float))
            return np.hstack([z, p[:, None], u[:, None]])
        return z


def predict_coupling(model, ds, p, u):
    """M-vector coupling for one deviation sample at phase (p, u)."""
    return model.predict_batch(np.atleast_2d(ds), [p], [u])[0]
