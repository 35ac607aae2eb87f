import numpy as np
import pytest

import matchcut


def small(**kw):
    base = dict(frames=4, height=16, width=16, cut_frame=2, schedule={"num_steps": 10}, joint_steps=4, backbone="zero")
    base.update(kw)
    return matchcut.config(**base)


def test_schedule_matches_oracle(oracles):
    o = oracles["schedules"][0]
    tables = matchcut.schedule_tables({"num_steps": o["T"], "beta_start": o["beta_start"], "beta_end": o["beta_end"]})
    np.testing.assert_allclose(tables["alpha_bar"], o["alpha_bar"], rtol=1e-6)
    assert all(s == 0.0 for s in tables["sigma"])
    step = next(s for s in o["steps"] if s["stochasticity"] == 0.0 and s["t"] == o["T"])
    z = np.array(o["z"]).reshape(1, 1, 1, 8)
    eps = np.array(o["eps"]).reshape(1, 1, 1, 8)
    got = matchcut.ddim_step(z, eps, o["T"], {"num_steps": o["T"], "beta_start": o["beta_start"], "beta_end": o["beta_end"]})
    np.testing.assert_allclose(got.ravel(), step["next"], rtol=1e-6)


def test_metrics_on_rendered_scenes():
    x = matchcut.render_scene(1, seed=3)
    assert x.shape == (16, 3, 32, 32)
    assert matchcut.ssim(x, x) == pytest.approx(1.0, abs=1e-6)
    assert matchcut.perceptual_distance(x, x) == 0.0
    assert matchcut.motion_consistency(x, x) == pytest.approx(1.0)
    y = matchcut.apply_tau(x, {"kind": "gamma", "gamma": 2.0})
    np.testing.assert_allclose(y, x**2, atol=1e-12)


def test_fork_boundaries_without_assets():
    same = matchcut.generate(small(joint_steps=10))
    np.testing.assert_array_equal(same[0], same[1])
    cfg = small(joint_steps=0)
    x_a, x_b = matchcut.generate(cfg)
    np.testing.assert_array_equal(x_a, matchcut.generate_single(cfg, cfg["prompt_a"]))
    cut = matchcut.assemble_matchcut(x_a, x_b, 2)
    np.testing.assert_array_equal(cut[:2], x_a[:2])
    np.testing.assert_array_equal(cut[2:], x_b[2:])


def test_validation_errors_surface_as_value_errors():
    with pytest.raises(ValueError, match="joint_steps"):
        small(joint_steps=11)
    with pytest.raises(ValueError):
        matchcut.ssim(np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 8)))


def test_session_with_trained_assets(tiny_assets, tmp_path):
    cfg = matchcut.config(frames=8, cut_frame=4, schedule={"num_steps": 12}, joint_steps=5, seed_init=4)
    ref = matchcut.generate(cfg, str(tiny_assets))
    s = matchcut.Session(cfg, str(tiny_assets))
    s.joint()
    assert s.preview("b").shape == (8, 3, 32, 32)
    s.intervene({"kind": "identity"})
    x_a, x_b = s.finalize()
    np.testing.assert_array_equal(x_a, ref[0])
    np.testing.assert_array_equal(x_b, ref[1])
    s.write(str(tmp_path / "out"))
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["matchcut.apng", "report.json", "x_a.apng", "x_b.apng"]
    report = matchcut.evaluate(x_a, x_b, cfg["prompt_a"], cfg["prompt_b"], str(tiny_assets))
    assert 0.0 <= report["rows"][0]["adherence_mean"] <= 1.0
    matchcut.save_video(str(tmp_path / "a.apng"), x_a)
    assert matchcut.load_video(str(tmp_path / "a.apng")).shape == x_a.shape
