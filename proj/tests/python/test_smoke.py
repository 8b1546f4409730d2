import json

import numpy as np
import pytest

import kinr


def test_fft_round_trip_and_unitarity():
    rng = np.random.default_rng(3)
    img = rng.standard_normal((8, 12)) + 1j * rng.standard_normal((8, 12))
    k = kinr.fft2c(img)
    assert np.allclose(kinr.ifft2c(k), img, atol=1e-12)
    assert np.isclose(np.linalg.norm(k), np.linalg.norm(img), rtol=1e-12)
    shifted = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img), norm="ortho"))
    assert np.allclose(k, shifted, atol=1e-12)


def test_cartesian_mask_has_central_block():
    m = kinr.make_mask("cartesian1d", 64, 100, 0.2, acs=0.08, seed=5)
    assert m.shape == (64, 100) and m.dtype == np.uint8
    full_columns = np.flatnonzero(m.all(axis=0))
    assert set(range(46, 54)) <= set(full_columns)


def test_mask_partition_is_exact():
    s = kinr.synth_phantom(32, 2)
    m = kinr.make_mask("gaussian2d", 32, 32, 0.2, seed=1)
    sampled, unsampled = kinr.apply_mask(s["kspace"], m)
    assert np.array_equal(sampled + unsampled, s["kspace"])
    assert np.all(unsampled[m == 1] == 0)


def test_metrics_identities():
    rng = np.random.default_rng(0)
    ref = rng.random((16, 16))
    assert kinr.nmse(2 * ref, ref) == 1.0
    assert kinr.ssim(ref, ref) == 1.0
    noisy = ref + 0.01 * rng.standard_normal(ref.shape)
    mse = np.mean((noisy - ref) ** 2)
    assert np.isclose(kinr.psnr(noisy, ref), 10 * np.log10(ref.max() ** 2 / mse), rtol=1e-12)


def test_stage_schedule():
    assert [kinr.stage_for_epoch(e) for e in (0, 19, 20, 59, 60, 99, 100, 199)] == [1, 1, 2, 2, 3, 3, 4, 4]


def test_errors_are_typed():
    with pytest.raises(kinr.ConfigError):
        kinr.make_mask("spiral", 8, 8, 0.2)
    with pytest.raises(kinr.ConfigError):
        kinr.load_config({"mask": {"family": "cartesian1d", "bogus": 1}})


def test_train_then_reconstruct(tmp_path, monkeypatch):
    monkeypatch.delenv("KINR_OUTPUT_ROOT", raising=False)
    cfg = {
        "dataset": {"count": 3, "size": 16, "val_count": 1, "seed": 4},
        "mask": {"family": "cartesian1d", "ratio": 0.4, "acs_fraction": 0.125},
        "model": {"dim": 8, "heads": 1, "encoder_layers": 1, "decoder_layers": 1, "pe_bands": 3,
                  "image_channels": 4},
        "training": {"schedule": [0, 1, 2, 3, 4], "batch_size": 2, "seed": 1},
        "output": {"dir": str(tmp_path / "run")},
    }
    seen = []
    summary = kinr.train(cfg, on_epoch=seen.append)
    assert summary["epochs_run"] == 4
    assert [r["stage"] for r in seen] == [1, 2, 3, 4]
    assert all(np.isfinite(r["total"]) for r in seen)

    model = kinr.Model(summary["final_checkpoint"])
    assert json.loads(model.model_json)["dim"] == 8
    s = kinr.synth_phantom(16, 9)
    m = kinr.make_mask("cartesian1d", 16, 16, 0.4, acs=0.125, seed=2)
    a = model.reconstruct(s["kspace"], m)
    b = model.reconstruct(s["kspace"], m)
    assert a["magnitude"].shape == (16, 16)
    assert np.array_equal(a["magnitude"], b["magnitude"])
    assert np.allclose(a["reference"], np.abs(s["image"]), rtol=1e-6, atol=1e-9)
