import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def tiny_config(**changes):
    """A fast training config: toy network, 32x32 scenes, a handful of samples."""
    from mtscene.data.synth import SceneConfig, SplitSpec
    from mtscene.harness.config import DatasetConfig, TrainConfig
    from mtscene.harness.gradcheck import toy_model_config

    scene = SceneConfig(image_size=(32, 32), tube_width=(4.0, 7.0), tube_length=(14.0, 28.0), instruments=(1, 2), min_area=16)
    cfg = TrainConfig(
        dataset=DatasetConfig(scene=scene, splits=SplitSpec(train=6, val=3, test=3)),
        model=toy_model_config(0),
        epochs=2,
        batch_size=3,
    )
    return cfg.replace(**changes) if changes else cfg


_ACCEPTANCE_KEY = "_mtscene_acceptance"


def record_criterion(config, number, ok, detail):
    lines = getattr(config, _ACCEPTANCE_KEY, {})
    lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    setattr(config, _ACCEPTANCE_KEY, lines)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, _ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
