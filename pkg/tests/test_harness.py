import csv
import json

import numpy as np
import pytest

from gsure_restore.harness import (
    PAPER_DEBLUR,
    PAPER_SR,
    PNP_GSURE_DEBLUR_BETA,
    Report,
    Scenario,
    bundled_image_dir,
    center_crop,
    degrade,
    find_scenario,
    list_images,
    load_scenarios,
    method_config,
    run_experiment,
    run_seed,
    synthetic_image,
)
from gsure_restore.image import load_image, psnr, save_image
from gsure_restore.kernels import KernelSpec
from gsure_restore.linop import ml_estimate
from gsure_restore.solvers import AdmmConfig, FixedIteration, LastIteration, MinSmoothedLoss, TrainConfig

# Rows as printed in the two scenario tables: kernel, sigma^2, xi, alpha.
EXPECTED_DEBLUR = [
    (KernelSpec("lorentzian"), 2.0, 5e-2, 1),
    (KernelSpec("lorentzian"), 8.0, 1e-1, 1),
    (KernelSpec("uniform", support=9), 0.3, 5e-3, 1),
    (KernelSpec("binomial"), 49.0, 1e-1, 1),
    (KernelSpec("gaussian", std=1.6), 4.0, 5e-2, 1),
    (KernelSpec("gaussian", std=0.4), 64.0, 0.0, 1),
]
EXPECTED_SR = [
    (KernelSpec("gaussian", std=1.6), 10.0, 1e-2, 3),
    (KernelSpec("gaussian", std=1.6), 49.0, 1e-2, 3),
    (KernelSpec("bicubic", scale=2), 10.0, 1e-2, 2),
    (KernelSpec("bicubic", scale=3), 10.0, 1e-2, 3),
    (KernelSpec("bicubic", scale=2), 49.0, 1e-2, 2),
    (KernelSpec("bicubic", scale=3), 49.0, 1e-2, 3),
]


@pytest.mark.parametrize("name, expected", [("paper-deblur", EXPECTED_DEBLUR), ("paper-sr", EXPECTED_SR)])
def test_builtin_tables_match_paper_rows(name, expected):
    scenarios = load_scenarios(name)
    assert len(scenarios) == 6
    for s, (kernel, sigma_sq, xi, alpha) in zip(scenarios, expected):
        assert (s.kernel, s.sigma_sq, s.xi, s.alpha) == (kernel, sigma_sq, xi, alpha)


def test_named_builtin_rows():
    d4 = find_scenario("deblur-4")
    assert d4.kernel.kind == "binomial" and d4.sigma_sq == 49 and d4.xi == 0.1
    s6 = find_scenario("sr-6")
    assert s6.kernel == KernelSpec("bicubic", scale=3) and s6.alpha == 3 and s6.sigma_sq == 49 and s6.xi == 1e-2
    d6 = find_scenario("deblur-6")
    assert d6.kernel == KernelSpec("gaussian", std=0.4) and d6.sigma_sq == 64 and d6.xi == 0


def test_unknown_builtin():
    with pytest.raises(ValueError):
        load_scenarios("paper-denoise")
    with pytest.raises(ValueError):
        find_scenario("deblur-7")


TOML = """
[[scenario]]
name = "soft"
task = "deblur"
kernel = { kind = "gaussian", std = 1.0 }
sigma_sq = 4.0
xi = 0.01

[[scenario]]
name = "x2"
task = "sr"
kernel = { kind = "bicubic", scale = 2 }
sigma_sq = 10
xi = 0.01
alpha = 2
"""


def test_load_toml_and_json(tmp_path):
    t = tmp_path / "s.toml"
    t.write_text(TOML)
    from_toml = load_scenarios(str(t))
    j = tmp_path / "s.json"
    j.write_text(json.dumps({"scenarios": [s.to_dict() for s in from_toml]}))
    assert load_scenarios(str(j)) == from_toml
    assert from_toml[1].alpha == 2 and from_toml[0].kernel.std == 1.0


@pytest.mark.parametrize(
    "text",
    [
        "[[scenario]]\nname = 'a'\n",  # missing fields
        "not toml [",
        "[[scenario]]\nname='a'\ntask='deblur'\nkernel='binomial'\nsigma_sq=1\ncolour=3\n",
        "[[scenario]]\nname='a'\ntask='sr'\nkernel='binomial'\nsigma_sq=1\n",  # sr needs alpha >= 2
        "[[scenario]]\nname='a'\ntask='deblur'\nkernel='binomial'\nsigma_sq=-1\n",
    ],
)
def test_malformed_scenario_files(tmp_path, text):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_scenarios(str(p))


def test_scenario_dict_round_trip():
    for s in PAPER_DEBLUR + PAPER_SR:
        assert Scenario.from_dict(s.to_dict()) == s


# ---------------------------------------------------------------- degrade


def test_degrade_noiseless_is_exact():
    x = synthetic_image(16, 1, seed=1)
    sc = Scenario("clean", "deblur", KernelSpec("binomial"), 0.0, 0.0)
    deg = degrade(x, sc, seed=0)
    np.testing.assert_array_equal(deg.observed, deg.op.H(x))


def test_degrade_deterministic_and_seeded():
    x = synthetic_image(16, 3, seed=2)
    sc = find_scenario("deblur-2")
    a, b, c = degrade(x, sc, 5), degrade(x, sc, 5), degrade(x, sc, 6)
    assert np.array_equal(a.observed, b.observed)
    assert not np.array_equal(a.observed, c.observed)


def test_ml_round_trip_with_invertible_kernel():
    x = synthetic_image(32, 3, seed=3)
    sc = Scenario("inv", "deblur", KernelSpec("gaussian", std=0.4), 0.0, 0.0)
    deg = degrade(x, sc, 0)
    assert psnr(ml_estimate(deg.op, deg.observed), x) >= 80


def test_degrade_super_resolution_shape():
    x = synthetic_image(36, 1, seed=4)
    deg = degrade(x, find_scenario("sr-4"), 0)
    assert deg.observed.shape == (1, 12, 12)


def test_degrade_shape_constraints_and_crop():
    x = synthetic_image(64, 1, seed=5)
    sc = find_scenario("sr-1")  # alpha 3, stride 4 -> multiples of 12
    with pytest.raises(ValueError):
        degrade(x, sc, 0)
    deg = degrade(x, sc, 0, crop=True)
    assert deg.truth.shape == (1, 60, 60) and deg.crop == "60x60+2+2"
    np.testing.assert_array_equal(deg.truth, x[:, 2:62, 2:62])


def test_center_crop_noop():
    x = synthetic_image(16, 1)
    out, tag = center_crop(x, 2, 4)
    assert out is x and tag == ""


# ---------------------------------------------------------------- configs


def test_method_config_paper_values():
    d2 = find_scenario("deblur-2")
    cfg = method_config("pnp-gsure", find_scenario("deblur-3"), "paper")
    assert (cfg.beta, cfg.rho, cfg.n_iter, cfg.inner_iters, cfg.inner_lr) == (4.0, 400.0, 250, 20, 1e-3)
    assert cfg.noise_level == pytest.approx(0.1)
    sr = method_config("pnp-gsure", find_scenario("sr-1"), "paper")
    assert (sr.beta, sr.rho, sr.n_iter, sr.inner_iters) == (100.0, 10.0, 50, 100)
    dip = method_config("pnp-dip", d2, "paper")
    assert (dip.beta, dip.rho, dip.inner_lr, dip.fidelity, dip.network_input) == (0.1, 0.1, 1e-2, "ls", "noise")
    dip_sr = method_config("pnp-dip", find_scenario("sr-5"), "paper")
    assert (dip_sr.beta, dip_sr.rho, dip_sr.n_iter, dip_sr.inner_iters) == (1.5, 1.5, 20, 250)
    g = method_config("gsure", d2, "paper")
    assert (g.iterations, g.lr, g.epsilon, g.selection) == (4000, 1e-2, 1e-6, MinSmoothedLoss(20))
    assert list(PNP_GSURE_DEBLUR_BETA.values()) == [0.75, 0.75, 4.0, 1.0, 2.0, 1.5]


def test_method_config_overrides():
    sc = find_scenario("deblur-1")
    cfg = method_config("dip", sc, "desk", {"iterations": 50, "selection": "fixed:20"}, seed=3)
    assert cfg == TrainConfig(iterations=50, lr=2e-3, selection=FixedIteration(20), seed=3)
    assert method_config("dip", sc, "paper").lr == 1e-2
    cfg = method_config("pnp-ls", sc, "desk", {"denoiser": "identity", "n_iter": 2})
    assert isinstance(cfg, AdmmConfig) and cfg.fidelity == "ls" and cfg.n_iter == 2
    with pytest.raises(ValueError):
        method_config("bm3d", sc)
    with pytest.raises(ValueError):
        method_config("gsure", sc, "huge")


def test_dip_default_selection_is_last():
    assert method_config("dip", find_scenario("deblur-1")).selection == LastIteration()


def test_run_seed_is_stable_and_distinct():
    assert run_seed(0, "a", "b", "c") == run_seed(0, "a", "b", "c")
    assert len({run_seed(0, "a", "b", m) for m in ("dip", "gsure")} | {run_seed(1, "a", "b", "dip")}) == 3
    assert 0 <= run_seed(7, "x") < 2**63


# ---------------------------------------------------------------- experiments

TINY = {"gsure": {"iterations": 3}, "dip": {"iterations": 3}, "pnp-gsure": {"n_iter": 2, "inner_iters": 2}}


@pytest.fixture
def images(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    save_image(synthetic_image(16, 1, seed=1), d / "a.png")
    save_image(synthetic_image(16, 3, seed=2), d / "b.png")
    return d


@pytest.fixture
def tiny_scenarios():
    return [find_scenario("deblur-4"), Scenario("x2", "sr", KernelSpec("bicubic", scale=2), 10.0, 1e-2, 2)]


def test_single_run_report(images, tmp_path):
    report = run_experiment(images / "a.png", [find_scenario("deblur-4")], ["gsure"], TINY, out_dir=tmp_path / "out")
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row["status"] == "ok"
    assert report.aggregates == [{"scenario": "deblur-4", "method": "gsure", "n": 1, "mean_psnr": row["psnr"]}]
    assert row["seed"] == run_seed(0, "a", "deblur-4", "gsure")
    with open(tmp_path / "out" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["psnr"]) == row["psnr"]
    assert (tmp_path / "out" / "traces" / "a__deblur-4__gsure.csv").exists()
    assert load_image(tmp_path / "out" / "restored" / "a__deblur-4__gsure.png").shape == (1, 16, 16)


def test_cross_product_and_aggregates(images, tiny_scenarios):
    report = run_experiment(images, tiny_scenarios, ["dip", "gsure"], TINY)
    assert len(report.rows) == 2 * 2 * 2
    assert all(r["status"] == "ok" for r in report.rows)
    for a in report.aggregates:
        vals = [r["psnr"] for r in report.rows if (r["scenario"], r["method"]) == (a["scenario"], a["method"])]
        assert abs(a["mean_psnr"] - np.mean(vals)) <= 1e-9


def test_report_is_reproducible(images, tiny_scenarios):
    a = run_experiment(images, tiny_scenarios, ["gsure"], TINY, base_seed=4)
    b = run_experiment(images, tiny_scenarios, ["gsure"], TINY, base_seed=4)
    c = run_experiment(images, tiny_scenarios, ["gsure"], TINY, base_seed=5)
    assert a.comparable() == b.comparable()
    assert a.comparable() != c.comparable()


def test_failures_are_recorded_not_raised(images):
    # a 15x15 kernel does not fit a 16x16 image cropped for alpha=3 (12x12)
    bad = Scenario("too-wide", "sr", KernelSpec("lorentzian"), 1.0, 0.0, 3)
    report = run_experiment(images, [bad, find_scenario("deblur-4")], ["gsure"], TINY)
    failed = report.failures
    assert len(failed) == 2 and all("larger than" in r["error"] for r in failed)
    assert sum(r["status"] == "ok" for r in report.rows) == 2
    assert [a["scenario"] for a in report.aggregates] == ["deblur-4"]


def test_partial_csv_is_valid_while_running(images, tmp_path, monkeypatch):
    """The CSV is appended per finished run, so an interrupted sweep keeps a readable file."""
    import gsure_restore.harness as h

    calls = {"n": 0}
    real = h._execute

    def flaky(spec):
        calls["n"] += 1
        if calls["n"] == 3:
            raise KeyboardInterrupt
        return real(spec)

    monkeypatch.setattr(h, "_execute", flaky)
    out = tmp_path / "out"
    with pytest.raises(KeyboardInterrupt):
        run_experiment(images, [find_scenario("deblur-4")], ["dip", "gsure"], TINY, out_dir=out)
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(r["status"] == "ok" for r in rows)


def test_report_json_mirror(images, tmp_path):
    run_experiment(images / "b.png", [find_scenario("deblur-1")], ["pnp-gsure"], TINY, out_dir=tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["rows"][0]["method"] == "pnp-gsure"
    cfg = data["config"]["method_configs"]["b/deblur-1/pnp-gsure"]
    assert cfg["n_iter"] == 2 and cfg["denoiser"]["kind"] == "tv" and cfg["beta"] == 0.75
    agg = (tmp_path / "aggregates.csv").read_text().splitlines()
    assert agg[0] == "scenario,method,n,mean_psnr" and len(agg) == 2


def test_report_aggregate_ignores_failures():
    rows = [
        {"image": "a", "scenario": "s", "method": "m", "status": "ok", "psnr": 30.0},
        {"image": "b", "scenario": "s", "method": "m", "status": "ok", "psnr": 32.0},
        {"image": "c", "scenario": "s", "method": "m", "status": "failed", "psnr": None},
    ]
    assert Report.aggregate(rows) == [{"scenario": "s", "method": "m", "n": 2, "mean_psnr": 31.0}]


def test_bundled_images():
    found = list_images("bundled")
    assert [i for i, _ in found] == ["astronaut", "brick", "camera"]
    for _, path in found:
        assert load_image(path).shape[1:] == (64, 64)
    assert bundled_image_dir().is_dir()


def test_synthetic_image_deterministic():
    a, b = synthetic_image(32, 3, seed=1), synthetic_image(32, 3, seed=1)
    assert np.array_equal(a, b) and a.shape == (3, 32, 32)
    assert a.min() >= 0 and a.max() <= 255
    assert not np.array_equal(a, synthetic_image(32, 3, seed=2))


def test_list_images_errors(tmp_path):
    with pytest.raises(ValueError):
        list_images(tmp_path / "missing")
    with pytest.raises(ValueError):
        list_images(tmp_path)
