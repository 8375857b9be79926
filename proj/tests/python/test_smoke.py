import json
import math

import numpy as np
import pytest

import itct


def test_oracle_and_value_functions():
    assert itct.true_mi_oracle(np.eye(4) / 4) == pytest.approx(2.0)
    assert itct.true_mi_oracle(np.full((3, 3), 1 / 9)) == pytest.approx(0.0, abs=1e-12)
    psi = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert itct.cross_entropy_term(psi, np.full((2, 2), 0.5)) == pytest.approx(1.0)
    assert itct.entropy_of_mean(psi) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        itct.cross_entropy_term(psi, np.full((3, 2), 0.5))
    with pytest.raises(itct.DataError):
        itct.true_mi_oracle(np.ones((2, 2)))


def test_brute_force_agreement():
    rng = np.random.default_rng(0)
    for _ in range(50):
        psi = rng.dirichlet(np.ones(7), size=5)
        phi = rng.dirichlet(np.ones(7), size=5)
        ce = float(np.mean(-(psi * np.log2(phi)).sum(axis=1)))
        m = psi.mean(axis=0)
        h = float(-(m * np.log2(m)).sum())
        assert itct.cross_entropy_term(psi, phi) == pytest.approx(ce, abs=1e-9)
        assert itct.entropy_of_mean(psi) == pytest.approx(h, abs=1e-9)


def test_normalize():
    frames = np.arange(12, dtype=np.float32).reshape(4, 3)
    out = itct.normalize(frames)
    assert out.shape == (4, 3)
    assert float(np.mean((out.astype(np.float64) ** 2).sum(axis=1))) == pytest.approx(1.0, rel=1e-5)


def test_synth_train_evaluate(tmp_path):
    spec = {"preset": "identity", "num_latent": 4, "num_utterances": 6,
            "windows_per_utterance": 4, "seed": 2}
    corpus = itct.synth(spec, str(tmp_path / "corpus"))
    assert corpus["true_mi_bits"] == pytest.approx(2.0)
    assert len(corpus["utterances"]) == 6
    assert corpus["utterances"][0]["frames"].shape == (140, 4)
    assert corpus["placement_stride"] == 35

    config = {"alphabet_size": 16, "hidden_dim": 8, "lr_schedule": "0:0.24:0.4", "clone_at": None, "seed": 1}
    ckpt = str(tmp_path / "model.itck")
    records = itct.train(str(tmp_path / "corpus"), config, ckpt)
    assert sum(r["type"] == "epoch" for r in records) == 4
    assert records == itct.train(str(tmp_path / "corpus"), config)

    scores = itct.evaluate(str(tmp_path / "corpus"), ckpt)
    assert 0.0 <= scores["overall_acc"] <= 1.0
    assert scores["frames"] == 24
    assert math.isfinite(scores["mi_bound_bits"])


def test_gradcheck_and_cli(tmp_path):
    cases = itct.gradcheck(seeds=1)
    assert cases and all(c["passed"] for c in cases)
    assert not any(c["passed"] for c in itct.gradcheck(inject_fault=True))

    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"preset": "identity", "num_utterances": 2, "windows_per_utterance": 2}))
    code, out, _ = itct.run_cli(["synth", str(spec), "--out", str(tmp_path / "c")])
    assert code == 0 and "true MI 2" in out
    code, _, err = itct.run_cli(["eval", str(tmp_path / "c"), str(tmp_path / "missing.itck"), "--out", str(tmp_path / "e")])
    assert code == 1
