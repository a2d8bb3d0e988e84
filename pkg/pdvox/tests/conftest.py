import logging
from tempfile import TemporaryDirectory

import numpy as np
import pytest

from pdvox.data.batching import AgeStats, SampleSet, fit_age_stats, load_samples
from pdvox.data.manifest import load_manifest
from pdvox.data.split import augment_split, stratified_split
from pdvox.data.synth import SynthSpec, synth_generate
from pdvox.log_config import configure_logging, get_logger
from pdvox.models.subject import Label, Sex, Subject

_log_history = []


def capture_processor(logger, method_name, event_dict):
    dict_copy = event_dict.copy()
    dict_copy["log_level"] = method_name
    _log_history.append(dict_copy)
    return event_dict


@pytest.fixture(scope="session", autouse=True)
def configure_logs():
    configure_logging(
        pretty=True, level=logging.DEBUG, additional_processors=[capture_processor]
    )


@pytest.fixture(scope="function")
def log_history():
    _log_history.clear()
    yield _log_history
    _log_history.clear()


@pytest.fixture(scope="function")
def log(log_history):
    return get_logger()


@pytest.fixture(scope="function")
def temp_dir():
    temp_dir = TemporaryDirectory()
    yield temp_dir.name
    temp_dir.cleanup()


def make_subjects(
    n_pd: int, n_hc: int, age: int = 60, volume_dir: str = "volumes"
) -> list[Subject]:
    subjects = []
    for label, n in ((Label.PD, n_pd), (Label.HC, n_hc)):
        for i in range(n):
            subject_id = f"{label.value}{i:04d}"
            subjects.append(
                Subject(
                    id=subject_id,
                    volume_path=f"{volume_dir}/{subject_id}.mvol",
                    age=age,
                    sex=Sex.M if i % 2 else Sex.F,
                    label=label,
                )
            )
    return subjects


@pytest.fixture
def subject_factory():
    return make_subjects


@pytest.fixture(scope="session")
def strong_dataset(tmp_path_factory):
    """24 strong-signal subjects at 16 x 20 x 20; returns the manifest path."""
    out_dir = tmp_path_factory.mktemp("strong")
    spec = SynthSpec.strong(n_per_class=12, extents=(16, 20, 20), seed=7)
    return synth_generate(get_logger(), spec, out_dir)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """12 subjects at the smallest extents the network accepts."""
    out_dir = tmp_path_factory.mktemp("tiny")
    spec = SynthSpec.strong(n_per_class=6, extents=(8, 10, 10), seed=3)
    return synth_generate(get_logger(), spec, out_dir)


def split_sample_sets(manifest_path, seed: int = 0) -> tuple[SampleSet, SampleSet, SampleSet, AgeStats]:
    split = stratified_split(load_manifest(manifest_path), seed=seed)
    augmented = augment_split(split)
    age_stats = fit_age_stats(split.train)
    base_dir = manifest_path.parent
    return (
        load_samples(augmented.train, age_stats, base_dir),
        load_samples(augmented.dev, age_stats, base_dir),
        load_samples(augmented.test, age_stats, base_dir),
        age_stats,
    )


@pytest.fixture(scope="session")
def tiny_samples(tiny_dataset):
    return split_sample_sets(tiny_dataset)


@pytest.fixture(scope="session")
def strong_samples(strong_dataset):
    return split_sample_sets(strong_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()

    if not item.config.getoption("--disallow-skip"):
        return
    if item.get_closest_marker("allow_skip"):
        return
    if rep.skipped:
        rep.outcome = "failed"
        r = call.excinfo._getreprcrash()
        rep.longrepr = f"Test should not have skipped: {r.path}:{r.lineno}: {r.message}"


def pytest_addoption(parser: pytest.Parser):
    parser.addoption(
        "--disallow-skip",
        action="store_true",
        default=False,
    )
