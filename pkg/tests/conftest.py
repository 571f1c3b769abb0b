"""Shared fixtures: glyph library, template banks, seeded synthetic data."""

from pathlib import Path

import pytest

from moldspot import synthgen
from moldspot.model import Family


@pytest.fixture(scope="session")
def library():
    return synthgen.default_library()


@pytest.fixture(scope="session")
def injection_bank(library):
    return synthgen.export_template_bank(library, Family.INJECTION)


@pytest.fixture(scope="session")
def press_bank(library):
    return synthgen.export_template_bank(library, Family.PRESS)


@pytest.fixture(scope="session")
def small_drawing(library):
    """One seeded 2000x1200 drawing with 12 mixed-family parts."""
    cfg = synthgen.SynthConfig(seed=7, width=2000, height=1200, parts=12)
    return synthgen.generate_drawing(library, cfg, drawing_id="small")


@pytest.fixture(scope="session")
def mini_dataset_dir(tmp_path_factory, library):
    """Three small drawings written to disk for file-level and CLI tests."""
    out = tmp_path_factory.mktemp("mini_dataset")
    cfg = synthgen.SynthConfig(seed=11, width=1600, height=1000, parts=8)
    synthgen.generate_dataset(library, cfg, 3, out, id_prefix="mini")
    return Path(out)


@pytest.fixture(scope="session")
def acceptance_dataset_dir(tmp_path_factory, library):
    """The acceptance-scale dataset: 10 desk-size drawings, 25 parts each."""
    out = tmp_path_factory.mktemp("acceptance_dataset")
    cfg = synthgen.SynthConfig(seed=1234, width=4000, height=2400, parts=25)
    synthgen.generate_dataset(library, cfg, 10, out, id_prefix="accept")
    return Path(out)
