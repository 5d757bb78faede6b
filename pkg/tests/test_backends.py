import os
import subprocess
import sys

import numpy as np
import pytest

from ctreach._core import BACKEND, ckernels, pykernels

pytestmark = pytest.mark.skipif(ckernels is None, reason="compiled kernels not built")


def _net(surrogate):
    n = surrogate.network
    return n.weights, n.biases, n.relu


def test_compiled_backend_selected():
    assert BACKEND == "cython"


def test_mlp_forward_identical(surrogate, rng):
    x = rng.uniform(-10, 10, size=(500, 2)) * [1, 3]
    a = pykernels.mlp_forward(x, *_net(surrogate))
    b = ckernels.mlp_forward(x, *_net(surrogate))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("hold_every", [0, 64])
def test_simulate_batch_identical(surrogate, rng, hold_every):
    x0 = rng.uniform([-9, -0.5], [9, 0.5], size=(16, 2))
    args = (x0, *_net(surrogate), None, 5.0, 5.0, np.radians(80), 1 / 256, 256, hold_every)
    for ra, rb in zip(pykernels.simulate_batch(*args), ckernels.simulate_batch(*args)):
        assert np.array_equal(np.asarray(ra), np.asarray(rb))


def test_simulate_batch_latent_identical(rng):
    from ctreach.controller import load_network, surrogate_path

    net = load_network(surrogate_path().with_name("aats_surrogate_latent.json"))
    x0 = rng.uniform([-9, -0.5], [9, 0.5], size=(4, 2))
    lat = rng.uniform(-0.8, 0.8, size=(4, 128, net.input_dim - 2))
    args = (x0, net.weights, net.biases, net.relu, lat, 5.0, 5.0, np.radians(80), 1 / 128, 128, 0)
    for ra, rb in zip(pykernels.simulate_batch(*args), ckernels.simulate_batch(*args)):
        assert np.array_equal(np.asarray(ra), np.asarray(rb))


@pytest.mark.parametrize("model", [(-0.0129, -0.44, 0.0, -1e-3, 2e-3), (-0.02, -0.5, 1e-3, -0.01, 0.01),
                                   (0.0, 0.0, 0.0, 0.2, 0.3)])
def test_reach_kernel_identical(model):
    kp, kth, c, wlo, whi = model
    box = np.array([1.0, 1.2, 0.05, 0.07])
    gamma = np.array([-10.0, 10.0, -0.6, 0.6])
    args = (box, kp, kth, c, wlo, whi, 5.0, 5.0, np.radians(80), gamma, 1.0, 64, 20)
    a = pykernels.reach_kernel(*args)
    b = ckernels.reach_kernel(*args)
    assert a[2] == b[2] and a[3] == b[3]
    assert np.array_equal(np.asarray(a[0])[: a[3]], np.asarray(b[0])[: b[3]])
    assert np.array_equal(np.asarray(a[1]), np.asarray(b[1]))


def test_pure_python_switch():
    env = dict(os.environ, CTREACH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import ctreach; print(ctreach.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_graph_identical_across_backends(tmp_path):
    code = ("import sys; from ctreach import *; from ctreach.graph import dumps_graph\n"
            "from ctreach.abstraction import LinearizeConfig\n"
            "cfg = CatConfig(linearize=LinearizeConfig(n_start=8, n_fit=64, n_audit=128))\n"
            "g = cat(NeuralNet(load_network(surrogate_path())), Partition(bins=(3, 3)), cfg)\n"
            "sys.stdout.write(dumps_graph(g))\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, CTREACH_PURE_PYTHON=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    assert outs[0] == outs[1]
