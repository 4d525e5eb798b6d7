from dataclasses import dataclass
from pathlib import Path

import pytest

from vnirliquid import dataset, synth
from vnirliquid.spectra import Device, ReferenceSet


@dataclass
class Corpus:
    paths: synth.CorpusPaths
    refs_vis: ReferenceSet
    refs_nir: ReferenceSet

    def samples(self, config="full"):
        return dataset.load_dataset(self.paths.datasets, self.refs_vis, self.refs_nir, config)


def make_corpus(out: Path, **kwargs) -> Corpus:
    paths = synth.generate_corpus(out, **kwargs)
    return Corpus(
        paths,
        dataset.load_references(paths.references, Device.VISIBLE),
        dataset.load_references(paths.references, Device.NIR),
    )


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory) -> Corpus:
    """The default 6 x 13 x 30 corpus from the committed profiles, moderate noise."""
    return make_corpus(tmp_path_factory.mktemp("fixture_corpus"))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Corpus:
    """6 x 13 x 5 corpus for quick pipeline tests."""
    return make_corpus(tmp_path_factory.mktemp("small_corpus"), samples_per_cell=5, seed=11)
