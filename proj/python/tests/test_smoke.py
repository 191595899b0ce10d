import math
import os
import pathlib

import numpy as np
import pytest

import lgsim

SOURCE = pathlib.Path(os.environ.get("LGSIM_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def small_params():
    p = lgsim.desk_params()
    p.update(d=16, P=32, s_star=4, k_plus=2, k_minus=2, N=8, m=64, m_sub=32, sigma_0=0.02)
    return p


def test_dictionary_and_batch():
    p = small_params()
    d = lgsim.build_dictionary(p, "random_orthogonal", 3)
    assert d.words.shape == (16, 16)
    assert lgsim.orthonormality_error(d) < 1e-12
    batch = lgsim.make_batch(d, p, step=0, seed=1)
    assert len(batch) == 8
    assert batch[0].patches.shape == (32, 16)
    labels = sorted(s.label for s in batch)
    assert labels == sorted([(1, 0), (1, 1), (-1, 0), (-1, 1)] * 2)
    again = lgsim.make_batch(d, p, step=0, seed=1)
    assert all(np.array_equal(a.patches, b.patches) for a, b in zip(batch, again))


def test_forward_matches_numpy():
    p = small_params()
    net = lgsim.init_network(p, "coarse", 2)
    d = lgsim.build_dictionary(p)
    x = lgsim.make_batch(d, p, 0, 4)[0].patches
    expected = [np.maximum(x @ net.weights(h).T + net.biases(h), 0).sum() for h in range(net.num_heads)]
    assert np.allclose(lgsim.forward(net, x), expected, rtol=1e-12, atol=1e-15)
    logits = lgsim.softmax_logits([0.0, math.log(3.0)])
    assert logits[1] == pytest.approx(0.75)


def test_train_and_audit():
    p = small_params()
    d = lgsim.build_dictionary(p)
    net, history = lgsim.train(d, p, regime="coarse", max_steps=20, eta=0.05, seed=3)
    assert history[0]["step"] == 0
    assert history[-1]["loss"] < history[0]["loss"]
    audit = lgsim.hard_example_audit(net, d, n_eval=4, seed=1)
    assert 0.0 <= audit["hard_accuracy"] <= 1.0
    geometry = lgsim.init_geometry(lgsim.init_network(p, "fine", 1), d)
    assert "max_star_dev" in geometry


def test_grad_check():
    p = small_params()
    d = lgsim.build_dictionary(p, "random_orthogonal", 1)
    done = 0
    for seed in range(50):
        net = lgsim.init_network(p, "coarse", seed)
        for h in range(net.num_heads):
            w = net.weights(h)
            w[:10] += 0.5 * d.words[np.arange(10) % d.num_designated]
            net.set_weights(h, w)
        try:
            err = lgsim.grad_check(net, lgsim.make_batch(d, p, seed, 7)[:2], 1e-5, seed, 50, d)
        except lgsim.RetriableError:
            continue
        assert err <= 1e-4
        done += 1
        if done == 3:
            break
    assert done == 3


def test_errors_map_to_python():
    p = small_params()
    p["N"] = 42
    with pytest.raises(lgsim.ConfigError):
        lgsim.build_dictionary(p)
    tax = lgsim.Taxonomy.from_edges("a\tb\nb\troot\n")
    assert tax.level("a", 1) == "b"
    assert tax.level("a", 99) == "root"
    with pytest.raises(KeyError):
        tax.level("zzz", 1)
    with pytest.raises(lgsim.MissingArtifactError):
        lgsim.emit_report("/nonexistent-lgsim-dir")


def test_hierarchy_tools():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(c, 0.3, size=(20, 2)) for c in ([0, 0], [10, 0], [0, 10])])
    r = lgsim.kmeans(X, 3, seed=1)
    assert len(set(r["assignments"][:20])) == 1
    assert len(set(r["assignments"])) == 3
    labels = [0] * 20 + [1] * 40
    ids = lgsim.assign_fine_ids(X, labels, "per_group", 2, 1)["ids"]
    assert set(ids[:20]) <= {0, 1} and set(ids[20:]) == {2, 3}
    fit = lgsim.fit_log_growth(list(range(50)), [math.log(2 * t + 10) for t in range(50)], 0, 49)
    assert fit["C"] == pytest.approx(2.0, rel=1e-4)


def test_pipeline_on_smoke_config(tmp_path):
    code, summary = lgsim.run_experiment(SOURCE / "configs" / "smoke.yaml", out=tmp_path)
    assert code == 0
    assert summary["regimes"]["coarse"]["steps_run"] == 40
    written = lgsim.emit_report(tmp_path, "json")
    assert written[0].name == "report.json"
