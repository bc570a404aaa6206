# Copyright 2026 The soda-peft Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import numpy as np
import pytest

import soda_peft as sp


def test_svd_and_lq_examples():
    u, s, vt = sp.svd(np.array([[0.0, 2.0], [1.0, 0.0]]))
    assert np.allclose(s, [2.0, 1.0])
    assert np.allclose(u @ np.diag(s) @ vt, [[0, 2], [1, 0]])
    l, q = sp.lq(np.array([[3.0, 4.0], [0.0, 5.0]]))
    assert np.allclose(l, [[5, 0], [4, 3]])
    assert np.allclose(q, [[0.6, 0.8], [-0.8, 0.6]])
    with pytest.raises(sp.ShapeError, match="rows <= cols"):
        sp.lq(np.ones((3, 2)))


def test_kron_and_cayley():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(sp.kron(a, np.eye(2)), np.kron(a, np.eye(2)))
    r = sp.cayley(np.array([[0.0, 0.0], [-1.0, 0.0]]))
    assert np.allclose(r, [[0, 1], [-1, 0]])
    rng = np.random.default_rng(0)
    big = sp.cayley(rng.normal(size=(5, 5)))
    assert sp.orthogonality_defect(big) < 1e-12
    assert sp.determinant(big) == pytest.approx(1.0)


def test_param_counts():
    assert sp.param_count("LORA", 64, 64, 1) == 128
    assert sp.param_count("KOFT", 64, 64, 3) == 48
    assert sp.param_count("SODA_SVD", 64, 64, 3) == 112
    assert sp.choose_kron_factorization(8, 3) == [2, 2, 2]
    with pytest.raises(sp.ConfigError):
        sp.choose_kron_factorization(7, 2)


@pytest.mark.parametrize("method,rank", [("LORA", 1), ("OFT", 4), ("KOFT", 3), ("SVDIFF", 3), ("SODA_SVD", 3), ("SODA_QR", 3)])
def test_adapter_starts_at_identity(method, rank):
    rng = np.random.default_rng(1)
    w0 = rng.normal(size=(8, 8)) / np.sqrt(8)
    ad = sp.Adapter(w0, method, rank)
    assert np.allclose(ad.weight(), w0, atol=1e-10)
    x = rng.normal(size=(8, 4))
    assert np.allclose(ad.forward(x), w0 @ x, atol=1e-10)
    grads = ad.backward(x, np.ones((8, 4)))
    assert grads


def test_adapter_delta_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    w0 = rng.normal(size=(6, 6))
    ad = sp.Adapter(w0, "SVDIFF", 3, "NONE")
    x = rng.normal(size=(6, 3))
    dh = rng.normal(size=(6, 3))
    g = ad.backward(x, dh)["delta"]
    base = np.array(ad.delta)
    h = 1e-6
    for i in range(len(base)):
        for sign, store in ((1, "p"), (-1, "m")):
            d = base.copy()
            d[i] += sign * h
            ad.delta = list(d)
            val = float(np.sum(dh * ad.forward(x)))
            if store == "p":
                plus = val
            else:
                minus = val
        assert g[i] == pytest.approx((plus - minus) / (2 * h), rel=1e-6, abs=1e-8)
    ad.delta = list(base)


def test_training_and_sweep_are_deterministic():
    a = sp.train(task="ROTATED_TARGET", method="KOFT", steps=200, lr=0.1, seed=3)
    b = sp.train(task="ROTATED_TARGET", method="KOFT", steps=200, lr=0.1, seed=3)
    assert a == b
    assert a["final_fit_error"] < a["initial_fit_error"]
    runs = sp.lr_sweep(method="SVDIFF", steps=300)
    assert [r["lr"] for r in runs] == [1e-3, 1e-2, 1e-1]
    assert min(r["final_fit_error"] for r in runs) < 1e-2
    with pytest.raises(sp.ConfigError):
        sp.train(beta=1.5)


def test_stiefel_step_and_verify():
    rng = np.random.default_rng(4)
    v = np.linalg.qr(rng.normal(size=(6, 6)))[0]
    for _ in range(50):
        v = sp.stiefel_step(v, rng.normal(size=(6, 6)), 0.1)
    assert sp.orthogonality_defect(v) < 1e-10
    checks = sp.verify(0)
    assert len(checks) == 5
    assert all(c["passed"] for c in checks)
