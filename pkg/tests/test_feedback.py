import numpy as np
import pytest

from dmpfeedback import so3
from dmpfeedback.canonical import CanonicalParams, PhaseKernelBank, default_kernel_bank, phase_rollout
from dmpfeedback.errors import DataError, NumericalError
from dmpfeedback.feedback import (
    FeedbackModel,
    extract_coupling_target,
    ffnn_forward,
    ffnn_gradient,
    init_ffnn,
    init_pmnn,
    make_dropout_masks,
    pca_fit,
    pca_transform,
    phase_modulation,
    pmnn_forward,
    pmnn_gradient,
    predict_coupling,
)
from dmpfeedback.primitives import unroll

from test_primitives import make_orientation_demo, make_test_prim


def fd_gradient_check(loss_fn, net, eps=1e-6):
    """Max relative error between analytic and central-difference gradients.

    Perturbations go through net.set_parameters so nets whose parameter list
    copies scalars (the feedforward output bias) are handled too.
    """
    _, grads = loss_fn()
    base = [p.copy() for p in net.parameters()]
    worst = 0.0
    for i in range(len(base)):
        fd = np.zeros_like(base[i])
        it = np.nditer(base[i], flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = base[i][idx]
            for sign, slot in ((+1, 0), (-1, 1)):
                trial = [p.copy() for p in base]
                trial[i][idx] = orig + sign * eps
                net.set_parameters(trial)
                loss, _ = loss_fn()
                if slot == 0:
                    lp = loss
                else:
                    lm = loss
            fd[idx] = (lp - lm) / (2 * eps)
            it.iternext()
        net.set_parameters([p.copy() for p in base])
        denom = max(np.linalg.norm(grads[i]), np.linalg.norm(fd), 1e-12)
        worst = max(worst, np.linalg.norm(grads[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# coupling-target extraction

def test_extraction_zero_on_nominal_unroll():
    prim = make_test_prim(n_kernels=12, seed=20, weight_scale=2.0)
    traj = unroll(prim, so3.identity(), dt=1e-3)
    c = extract_coupling_target(traj, prim)
    assert np.abs(c).max() < 1e-6


def test_extraction_recovers_injected_coupling():
    prim = make_test_prim(n_kernels=12, seed=21, weight_scale=1.0)

    def injected(phase, t):
        s = t / prim.tau
        return np.array([4.0, -2.0, 1.0]) * np.sin(np.pi * s) ** 2

    traj = unroll(prim, so3.identity(), coupling_source=injected, dt=1e-3)
    recovered = extract_coupling_target(traj, prim)
    reference = np.array([injected(None, t) for t in traj.t])
    rms = np.sqrt(np.mean((recovered - reference) ** 2))
    assert rms < 1e-3 * np.abs(reference).max()


def test_extraction_linearity():
    prim = make_test_prim(n_kernels=12, seed=22, weight_scale=1.0)

    def make(scale):
        def injected(phase, t):
            return scale * np.array([3.0, 0.0, -1.0]) * np.sin(np.pi * t / prim.tau) ** 2
        traj = unroll(prim, so3.identity(), coupling_source=injected, dt=1e-3)
        return extract_coupling_target(traj, prim)

    c1, c2 = make(1.0), make(2.0)
    scale = np.abs(c1).max()
    assert np.abs(c2 - 2.0 * c1).max() < 1e-3 * scale


def test_extraction_length_mismatch():
    # a demo longer than the primitive's canonical span is misaligned
    prim = make_test_prim(seed=23)
    demo = make_orientation_demo(duration=2.0, rate=64.0)
    with pytest.raises(DataError):
        extract_coupling_target(demo, prim)


# ---------------------------------------------------------------------------
# PMNN structure

def make_bank(n=25, tau=1.0):
    return default_kernel_bank(n, CanonicalParams(tau=tau))


def test_pmnn_zero_at_zero_phase_velocity():
    bank = make_bank()
    rng = np.random.default_rng(30)
    for _ in range(100):
        net = init_pmnn(6, [13], bank.n, rng)
        x = rng.normal(size=6) * 10
        p = rng.uniform(0, 1)
        assert pmnn_forward(net, x, p, 0.0, bank) == 0.0


def test_pmnn_single_kernel_collapse():
    # a two-kernel bank evaluated at a center: normalization concentrates on
    # the matching kernel when widths are huge
    bank = PhaseKernelBank(np.array([1.0, 0.0]), np.array([1e8, 1e8]))
    rng = np.random.default_rng(31)
    net = init_pmnn(4, [], 2, rng)
    x = rng.normal(size=4)
    u = -1.7
    pre = net.mod_weights @ x + net.mod_bias
    assert pmnn_forward(net, x, 1.0, u, bank) == pytest.approx(
        u * net.out_weights[0] * pre[0], rel=1e-9)


def test_pmnn_matches_scripted_layers():
    bank = make_bank(7)
    rng = np.random.default_rng(32)
    net = init_pmnn(5, [9, 4], bank.n, rng)
    x = rng.normal(size=5)
    p, u = 0.42, -2.3

    h = np.tanh(net.hidden_weights[0] @ x + net.hidden_biases[0])
    h = np.tanh(net.hidden_weights[1] @ h + net.hidden_biases[1])
    psi = np.exp(-bank.widths * (p - bank.centers) ** 2)
    g = psi / psi.sum() * u
    m = g * (net.mod_weights @ h + net.mod_bias)
    ref = float(net.out_weights @ m)
    assert pmnn_forward(net, x, p, u, bank) == pytest.approx(ref, rel=1e-12)


def test_pmnn_converges_with_phase_velocity():
    bank = make_bank()
    params = CanonicalParams(tau=1.0)
    p, u = phase_rollout(params, 1e-3, 2000)   # two tau
    rng = np.random.default_rng(33)
    net = init_pmnn(6, [10], bank.n, rng)
    x = rng.normal(size=6)
    c = np.array([pmnn_forward(net, x, pi, ui, bank) for pi, ui in zip(p, u)])
    assert abs(c[-1]) < 1e-3 * np.abs(c).max()


# ---------------------------------------------------------------------------
# gradients

def test_pmnn_dropout_reproducible_with_seed():
    bank = make_bank(6)
    rng = np.random.default_rng(60)
    net = init_pmnn(4, [9], bank.n, rng)
    x = rng.normal(size=(5, 4))
    p = rng.uniform(0.1, 1.0, size=5)
    u = rng.uniform(-4.0, -0.5, size=5)
    a = pmnn_forward(net, x, p, u, bank)
    b = pmnn_forward(net, x, p, u, bank)
    assert np.array_equal(a, b)            # deterministic without dropout
    m1 = make_dropout_masks(net, 5, 0.5, np.random.default_rng(61))
    m2 = make_dropout_masks(net, 5, 0.5, np.random.default_rng(61))
    assert np.array_equal(pmnn_forward(net, x, p, u, bank, masks=m1),
                          pmnn_forward(net, x, p, u, bank, masks=m2))


def test_pmnn_gradient_zero_case():
    bank = make_bank(5)
    net = init_pmnn(3, [4], bank.n, np.random.default_rng(34))
    for p in net.parameters():
        p[...] = 0.0
    x = np.zeros((4, 3))
    loss, grads = pmnn_gradient(net, x, np.full(4, 0.5), np.full(4, -1.0),
                                np.zeros(4), bank)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads)


@pytest.mark.parametrize("hidden", [[], [11]])
def test_pmnn_gradient_finite_difference(hidden):
    bank = make_bank(6)
    rng = np.random.default_rng(35)
    net = init_pmnn(4, hidden, bank.n, rng)
    x = rng.normal(size=(5, 4))
    p = rng.uniform(0.1, 1.0, size=5)
    u = rng.uniform(-4.0, -0.5, size=5)
    target = rng.normal(size=5)
    worst = fd_gradient_check(lambda: pmnn_gradient(net, x, p, u, target, bank), net)
    assert worst < 1e-4


def test_pmnn_output_gradient_identity():
    bank = make_bank(6)
    rng = np.random.default_rng(36)
    net = init_pmnn(4, [7], bank.n, rng)
    x = rng.normal(size=(8, 4))
    p = rng.uniform(0.1, 1.0, size=8)
    u = rng.uniform(-4.0, -0.5, size=8)
    target = rng.normal(size=8)
    c = pmnn_forward(net, x, p, u, bank)
    # recompute m for the identity check
    h = np.tanh(x @ net.hidden_weights[0].T + net.hidden_biases[0])
    m = phase_modulation(bank, p, u) * (h @ net.mod_weights.T + net.mod_bias)
    _, grads = pmnn_gradient(net, x, p, u, target, bank)
    expected = np.mean((c - target)[:, None] * m, axis=0)
    assert np.allclose(grads[-1], expected, atol=1e-12)


def test_pmnn_gradient_with_dropout_masks_matches_fd():
    bank = make_bank(6)
    rng = np.random.default_rng(37)
    net = init_pmnn(4, [9], bank.n, rng)
    x = rng.normal(size=(5, 4))
    p = rng.uniform(0.1, 1.0, size=5)
    u = rng.uniform(-4.0, -0.5, size=5)
    target = rng.normal(size=5)
    masks = make_dropout_masks(net, 5, 0.5, np.random.default_rng(38))
    worst = fd_gradient_check(
        lambda: pmnn_gradient(net, x, p, u, target, bank, masks=masks), net)
    assert worst < 1e-4


def test_ffnn_forward_and_gradient():
    rng = np.random.default_rng(39)
    net = init_ffnn(6, [10, 5], rng)
    for w in net.hidden_weights:
        w[...] = 0.0
    for b in net.hidden_biases:
        b[...] = 0.0
    net.out_weights[...] = 0.0
    net.out_bias = 1.25
    x = rng.normal(size=(3, 6))
    assert np.allclose(ffnn_forward(net, x), 1.25)

    net = init_ffnn(6, [10, 5], rng)
    x = rng.normal(size=(5, 6))
    target = rng.normal(size=5)
    worst = fd_gradient_check(lambda: ffnn_gradient(net, x, target), net)
    assert worst < 1e-4


def test_ffnn_nonzero_at_zero_phase_velocity():
    # structural contrast with the PMNN: appending (p, u) = (p, 0) to the
    # input gives no zero-output guarantee
    rng = np.random.default_rng(40)
    hits = 0
    for _ in range(20):
        net = init_ffnn(5, [8], rng)
        x = np.concatenate([rng.normal(size=3), [0.5, 0.0]])
        if abs(ffnn_forward(net, x)) > 1e-6:
            hits += 1
    assert hits == 20


# ---------------------------------------------------------------------------
# PCA

def test_pca_exact_subspace():
    rng = np.random.default_rng(41)
    basis = rng.normal(size=(2, 6))
    coords = rng.normal(size=(40, 2))
    data = coords @ basis + rng.normal(size=6)
    proj = pca_fit(data, retained=0.99)
    assert proj.n_components == 2
    recon = pca_transform(proj, data) @ proj.components + proj.mean
    assert np.abs(recon - data).max() < 1e-9


def test_pca_orthonormal_components():
    rng = np.random.default_rng(42)
    data = rng.normal(size=(30, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
    proj = pca_fit(data, retained=0.9)
    gram = proj.components @ proj.components.T
    assert np.abs(gram - np.eye(proj.n_components)).max() < 1e-9


def test_pca_minimal_component_count():
    rng = np.random.default_rng(43)
    data = rng.normal(size=(200, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.25])
    proj = pca_fit(data, retained=0.95)
    # eigen-decomposition oracle on the covariance
    centered = data - data.mean(axis=0)
    evals = np.sort(np.linalg.eigvalsh(centered.T @ centered))[::-1]
    ratios = np.cumsum(evals) / evals.sum()
    k_expected = int(np.searchsorted(ratios, 0.95 - 1e-12)) + 1
    assert proj.n_components == k_expected
    kept = evals[:proj.n_components].sum() / evals.sum()
    assert kept >= 0.95


def test_pca_degenerate_data():
    with pytest.raises(NumericalError):
        pca_fit(np.ones((10, 3)))


# ---------------------------------------------------------------------------
# assembled model

def make_model(kind="pmnn", hidden=(10,), n_inputs=6, bank=None, seed=50,
               pca=None, phase_inputs=True):
    bank = bank or make_bank(8)
    rng = np.random.default_rng(seed)
    if kind == "ffnn":
        net = init_ffnn(n_inputs + (2 if phase_inputs else 0), list(hidden), rng)
    else:
        dim = n_inputs if pca is None else pca.n_components
        net = init_pmnn(dim, list(hidden), bank.n, rng,
                        train_output=kind != "pca_pmnn")
    return FeedbackModel(kind=kind, nets=[net], bank=bank,
                         input_mean=np.zeros(n_inputs), input_std=np.ones(n_inputs),
                         target_scale=np.array([2.5]), coupling_axes=[1],
                         pca=pca, phase_inputs=phase_inputs)


def test_predict_coupling_zero_at_start():
    model = make_model()
    rng = np.random.default_rng(51)
    out = predict_coupling(model, rng.normal(size=6), 1.0, 0.0)
    assert np.all(out == 0.0)


def test_predict_coupling_zero_input_not_forced_zero():
    # at u > 0 a zero deviation produces the network's response to the zero
    # vector, which nothing in the structure pins to zero
    model = make_model(seed=52)
    model.nets[0].mod_bias += 0.5
    out = predict_coupling(model, np.zeros(6), 0.6, -2.0)
    ref = pmnn_forward(model.nets[0], np.zeros(6), 0.6, -2.0, model.bank)
    assert out[0] == pytest.approx(ref * model.target_scale[0], rel=1e-12)
    assert abs(out[0]) > 1e-9


def test_pipeline_identity_pca_equals_plain_modulated_stage():
    bank = make_bank(8)
    rng = np.random.default_rng(53)
    from dmpfeedback.feedback import PcaProjection

    identity_pca = PcaProjection(mean=np.zeros(6), components=np.eye(6))
    pipeline = make_model(kind="pca_pmnn", hidden=(), bank=bank, pca=identity_pca, seed=54)
    plain = make_model(kind="pmnn", hidden=(), bank=bank, seed=54)
    plain.nets[0].mod_weights = pipeline.nets[0].mod_weights.copy()
    plain.nets[0].mod_bias = pipeline.nets[0].mod_bias.copy()
    plain.nets[0].out_weights = np.ones(bank.n)

    x = rng.normal(size=(7, 6))
    p = rng.uniform(0.1, 1, size=7)
    u = rng.uniform(-3, -0.1, size=7)
    assert np.allclose(pipeline.predict_batch(x, p, u), plain.predict_batch(x, p, u))


def test_pipeline_training_loss_monotone_under_gd():
    # with the output stage frozen the objective is linear least squares in
    # the modulated layer, so full-batch GD with a small step descends
    bank = make_bank(8)
    rng = np.random.default_rng(55)
    net = init_pmnn(4, [], bank.n, rng, train_output=False)
    x = rng.normal(size=(40, 4))
    p = rng.uniform(0.1, 1, size=40)
    u = rng.uniform(-3, -0.1, size=40)
    target = rng.normal(size=40)
    losses = []
    for _ in range(200):
        loss, grads = pmnn_gradient(net, x, p, u, target, bank)
        losses.append(loss)
        params = net.parameters()
        trainable = net.trainable_mask()
        for i, g in enumerate(grads):
            if trainable[i]:
                params[i] = params[i] - 0.5 * g
        net.set_parameters(params)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
