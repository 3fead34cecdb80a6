import json

import pytest

from cmrfusion.pipeline import PipelineConfig, run_stage


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {outcome}")

PHANTOM_CONFIG = {
    "nx": 96, "ny": 96, "nz": 3, "n_phases": 10,
    "spacing": [1.0, 1.0, 8.0],
    "radius_taper_mm": 1.0,
    "noise_sigma": 4.0,
    "noise_sigma_de": 4.0,
    "seed": 21,
    "edge_width_px": 1.0,
    "rv_radius_mm": 12.5,
    "marker_disks": [[55.0, 34.0, 7.0], [235.0, 33.0, 6.0]],
    "motions": [{"tier": "N", "amplitude_mm": 4.0,
                 "t_on_frac": 0.25, "t_off_frac": 0.55}] * 6,
    "scar": {"center_deg": 30.0, "span_deg": 60.0, "transmural_fraction": 0.6},
    "misalignment": {"tx": 1.5, "ty": -1.0, "theta": 1.0, "dz": 0},
    "n_exams": 2,
}


def make_config(out_dir, **overrides) -> PipelineConfig:
    phantom = dict(PHANTOM_CONFIG)
    phantom.update(overrides.pop("phantom", {}))
    return PipelineConfig(out_dir=str(out_dir), window_start_ms=520.0,
                          phantom=phantom, **overrides)


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory):
    """One fully-run pipeline shared by pipeline/server tests (stages are
    deterministic and later tests only read the artifacts)."""
    out = tmp_path_factory.mktemp("pipeline")
    cfg = make_config(out)
    for stage in ("phantom", "sync", "register", "segment", "sectorize",
                  "mie", "pamm", "report"):
        run_stage(stage, cfg)
    return out, cfg


@pytest.fixture()
def config_file(tmp_path):
    cfg = make_config(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json(), indent=2))
    return path, cfg
