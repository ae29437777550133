"""Release-gate self checks: gradients, channel moments, GAE, phase alignment, determinism.

Each suite returns a list of :class:`CheckResult`; :func:`run_selfcheck`
runs them all and never raises on a failed check, so the report always
lists every suite.
"""

from __future__ import annotations

import contextlib
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, Topology, aligned_phases, cascaded_gain, sample_nakagami_gain
from .env import CompNomaEnv, EnvConfig, HybridAction
from .hppo import (HPPO, HybridPolicy, UpdateBatch, compute_gae, hppo_loss, hppo_loss_and_grads,
                   sample_actions, surrogate_loss)
from .neural import DenseNet, max_relative_error, numerical_gradient

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}.{self.name}: {self.detail}"


def random_batch(policy: HybridPolicy, rng, n=16, n_objectives=1):
    """A minibatch whose stored log-probs differ slightly from the current policy's."""
    X = rng.normal(size=(n, policy.encoder.in_dim))
    out = sample_actions(policy, X, rng)
    return UpdateBatch(X, out["maneuver"], out["u"], out["noise"],
                       out["logp_d"] + rng.normal(0.0, 0.05, n),
                       out["logp_c"] + rng.normal(0.0, 0.05, n),
                       rng.normal(size=(n, n_objectives)), rng.normal(size=(n, n_objectives)))


def miniature_policy(seed, width=8, state_dim=7, n_discrete=5, n_continuous=4, n_objectives=1):
    """Small policy with enlarged output layers so every loss term is active."""
    rng = np.random.default_rng(seed)
    policy = HybridPolicy(state_dim, n_discrete, n_continuous, n_objectives, (width, width),
                          (width,), (width,), rng=rng)
    for name, net in policy.nets.items():
        if name != "encoder":
            net.weights[-1] *= 50.0
            net.touch()
    policy.log_std[:] = rng.normal(np.log(0.5), 0.3, n_continuous)
    return policy, rng


def policy_gradient_error(seed, width=8, clip_eps=0.2, value_coef=0.5, entropy_coef=0.05,
                          n_objectives=1, n_discrete=5):
    """Max relative error between analytic and central-difference H-PPO loss gradients."""
    policy, rng = miniature_policy(seed, width, n_discrete=n_discrete, n_objectives=n_objectives)
    batch = random_batch(policy, rng, n_objectives=n_objectives)
    _, grads = hppo_loss_and_grads(policy, batch, clip_eps, value_coef, entropy_coef)
    num = numerical_gradient(lambda: hppo_loss(policy, batch, clip_eps, value_coef, entropy_coef),
                             policy.parameters(), 1e-5)
    return max_relative_error(grads, num, 1e-6)


@contextlib.contextmanager
def perturbed_backward(scale=1.01):
    """Test hook: scale every DenseNet gradient so gradient checks must fail."""
    original = DenseNet.backward

    def backward(self, tape, output_grad):
        grads, input_grad = original(self, tape, output_grad)
        return [g * scale for g in grads], input_grad

    DenseNet.backward = backward
    try:
        yield
    finally:
        DenseNet.backward = original


# -- suites ------------------------------------------------------------------

def check_gradients(n_policies=5):
    out = []
    rng = np.random.default_rng(0)
    net = DenseNet.mlp(6, (8,), 3, rng=rng, out_activation="tanh")
    X = rng.normal(size=(5, 6))
    W = rng.normal(size=(5, 3))

    def loss():
        y, _ = net.forward(X)
        return float(np.sum(W * y))

    _, tape = net.forward(X)
    num = numerical_gradient(loss, net.parameters(), 1e-5)
    err = max_relative_error(net.backward(tape, W)[0], num)
    out.append(CheckResult("gradients", "dense_net", err < GRAD_TOL, f"max rel err {err:.2e}"))
    worst = max(policy_gradient_error(s) for s in range(n_policies))
    out.append(CheckResult("gradients", "hppo_loss", worst < GRAD_TOL,
                           f"max rel err {worst:.2e} over {n_policies} policies"))
    worst = policy_gradient_error(99, n_objectives=3, n_discrete=0)
    out.append(CheckResult("gradients", "multi_critic_no_discrete", worst < GRAD_TOL,
                           f"max rel err {worst:.2e}"))
    return out


def check_channel_moments(n=10 ** 6):
    out = []
    rng = np.random.default_rng(1)
    for m in (0.5, 1.0, 3.0):
        p = np.abs(sample_nakagami_gain(m, 1.0, rng, size=n)) ** 2
        mean_err = abs(p.mean() - 1.0)
        var_err = abs(p.var() - 1.0 / m) * m
        out.append(CheckResult("channel_moments", f"m={m:g}", mean_err < 0.01 and var_err < 0.02,
                               f"mean err {mean_err:.4f}, var rel err {var_err:.4f}"))
    return out


def check_gae():
    out = []
    adv, ret = compute_gae(np.array([1.0, 1.0]), np.zeros(3), np.zeros(2, dtype=bool), 1.0, 1.0)
    out.append(CheckResult("gae", "two_step_unroll", np.array_equal(adv, [2.0, 1.0]),
                           f"advantages {adv.tolist()}"))
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=6), rng.normal(size=7)
    d = np.array([0, 0, 1, 0, 0, 0], dtype=bool)
    adv, _ = compute_gae(r, v, d, 0.9, 0.0)
    delta = r + 0.9 * v[1:] * (1 - d) - v[:-1]
    out.append(CheckResult("gae", "td0_degeneracy", np.allclose(adv, delta, rtol=0, atol=1e-15),
                           "lambda=0 gives one-step TD errors"))
    loss, _, _ = surrogate_loss(np.log([1.5]), np.zeros(1), np.ones(1), 0.2)
    out.append(CheckResult("gae", "clipped_surrogate", abs(loss + 1.2) < 1e-12, f"loss {loss:.12f}"))
    return out


def check_phase_alignment(n=3, levels=16):
    rng = np.random.default_rng(3)
    g_in = rng.normal(size=n) + 1j * rng.normal(size=n)
    g_out = rng.normal(size=n) + 1j * rng.normal(size=n)
    best = np.abs(cascaded_gain(g_in, aligned_phases(g_in, g_out), g_out))
    bound = np.sum(np.abs(g_in * g_out))
    grid = 2 * np.pi * np.arange(levels) / levels
    exhaustive = max(np.abs(cascaded_gain(g_in, np.array(c), g_out))
                     for c in itertools.product(grid, repeat=n))
    gap = np.cos(np.pi / levels)   # worst per-element quantization loss
    return [
        CheckResult("phase_alignment", "closed_form", abs(best - bound) < 1e-12 * bound,
                    f"|gain| {best:.6g} vs sum of magnitudes {bound:.6g}"),
        CheckResult("phase_alignment", "beats_exhaustive", exhaustive <= best * (1 + 1e-12)
                    and exhaustive >= gap * best, f"exhaustive/aligned {exhaustive / best:.4f}"),
    ]


def check_determinism():
    out = []
    topo, params = Topology.default(), ChannelParams(n_aris=2, n_tris=2)
    traces = []
    for _ in range(2):
        env = CompNomaEnv(topo, params, EnvConfig(horizon=5), n_envs=2)
        s = env.reset(seed=11)
        rng = np.random.default_rng(5)
        rows = [s]
        for _ in range(5):
            a = HybridAction(rng.integers(0, 5, 2), rng.uniform(-1, 1, (2, env.continuous_dim)))
            step = env.step(a)
            rows += [step.next_state, step.reward]
        traces.append(np.concatenate([np.ravel(r) for r in rows]))
    out.append(CheckResult("determinism", "env_rollout", traces[0].tobytes() == traces[1].tobytes(),
                           "identical seeds give bit-identical trajectories"))
    curves = []
    for _ in range(2):
        env = CompNomaEnv(topo, params, EnvConfig(horizon=8), n_envs=2)
        agent = HPPO(n_episodes=4, rollout_steps=8, minibatch_size=8, n_epochs=2,
                     encoder_widths=(8,), head_widths=(8,), critic_widths=(8,), random_state=3)
        agent.fit(env)
        curves.append((np.array(agent.curve_.rows).tobytes(), agent.policy_.to_bytes()))
    out.append(CheckResult("determinism", "training_run", curves[0] == curves[1],
                           "identical seeds give bit-identical curves and weights"))
    return out


def check_checkpoint():
    policy, _ = miniature_policy(4)
    blob = policy.to_bytes()
    ok = HybridPolicy.from_bytes(blob).to_bytes() == blob
    return [CheckResult("checkpoint", "round_trip", ok, f"{len(blob)} bytes")]


SUITES = {
    "gradients": check_gradients,
    "channel_moments": check_channel_moments,
    "gae": check_gae,
    "phase_alignment": check_phase_alignment,
    "determinism": check_determinism,
    "checkpoint": check_checkpoint,
}


def run_selfcheck(perturb_backward=False, suites=None):
    """Run the suites; returns (all_passed, results, elapsed seconds per suite)."""
    results, timing = [], {}
    ctx = perturbed_backward() if perturb_backward else contextlib.nullcontext()
    with ctx:
        for name in suites or SUITES:
            t0 = time.perf_counter()
            try:
                results += SUITES[name]()
            except Exception as exc:  # a crashing suite is a failed suite
                results.append(CheckResult(name, "error", False, f"{type(exc).__name__}: {exc}"))
            timing[name] = time.perf_counter() - t0
    return all(r.passed for r in results), results, timing
