import json

import numpy as np
import pytest

import lightdiff

ENV = {
    "width": 32,
    "height": 16,
    "ambient": [0.1, 0.1, 0.1],
    "lobes": [{"direction": [0.0, 0.6, 0.8], "width": 0.3, "intensity": 8.0, "color": [1.0, 0.9, 0.8]}],
}
SCENE = {"geometry": "sphere", "albedo": "flat", "skin_albedo": [0.5, 0.5, 0.5]}


def test_gini_of_impulse():
    env = np.zeros((8, 16, 3))
    env[3, 5] = 1.0
    k = env.shape[0] * env.shape[1]
    assert lightdiff.gini(env) == pytest.approx((k - 1) / k, abs=1e-12)


def test_convolution_keeps_constant_maps():
    env = np.full((8, 16, 3), 0.7)
    out = lightdiff.diffuse_convolve(env, 4.0, 8)
    assert out.shape == (8, 16, 3)
    np.testing.assert_allclose(out, 0.7, rtol=1e-9)


def test_uniform_sphere_render():
    env = np.ones((16, 32, 3))
    out = lightdiff.render(json.dumps(SCENE), env, seed=1, width=24, height=24)
    on = out["alpha"] > 0
    assert on.any()
    np.testing.assert_allclose(out["image"][on], 0.5, rtol=0.02)


def test_maps_and_metrics():
    env = lightdiff.gen_procedural_env(json.dumps(ENV), 3)
    out = lightdiff.render(json.dumps(SCENE), env, seed=2, width=16, height=16)
    flat = lightdiff.diffuse_convolve(env, 1.0, 16)
    diffuse = lightdiff.render(json.dumps(SCENE), flat, seed=2, width=16, height=16)["image"]
    s, d = lightdiff.spec_shadow(out["image"], diffuse, out["alpha"])
    assert np.all(np.minimum(s, d) == 0)
    m = lightdiff.compute_metrics(out["image"], out["image"], out["alpha"])
    assert m["mae"] == 0 and m["mse"] == 0 and m["ssim"] == pytest.approx(1.0)


def test_untrained_model_is_identity_on_bright_pixels():
    cfg = "g_encoder = 4,4\ng_decoder = 4,4\ng_bottleneck = 4\nh_encoder = 4,4\nh_decoder = 4,4\nh_bottleneck = 4\n"
    params = lightdiff.Params.init(cfg, 1)
    assert len(params) > 0 and any(n.startswith("h.") for n in params.names())
    image = np.full((16, 16, 3), 0.4, dtype=np.float32)
    alpha = np.ones((16, 16), dtype=np.float32)
    out = params.diffuse(image, alpha, 0.0)
    np.testing.assert_allclose(out, image, rtol=1e-5)


def test_errors_are_value_errors():
    with pytest.raises(lightdiff.LightDiffError):
        lightdiff.gini(np.zeros((8, 16, 3)))
    with pytest.raises(ValueError):
        lightdiff.compute_metrics(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((4, 4)))


def test_dataset(tmp_path):
    n = lightdiff.generate_dataset("train_count = 2\neval_count = 1\nwidth = 8\nheight = 8\nenv_height = 8\n", 4, tmp_path)
    assert n == 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["records"]) == 3
