"""Synthetic corpus generation, splitting, and persistence tests."""

import json

import pytest

from wadlab.corpus import (
    ATTACK,
    NORMAL,
    Dataset,
    GeneratorSpec,
    RawSample,
    generate_synthetic,
    load_dataset,
    load_samples,
    save_dataset,
    split_dataset,
)
from wadlab.errors import ConfigError, DataError


def test_raw_sample_validation():
    with pytest.raises(DataError):
        RawSample("", NORMAL)
    with pytest.raises(DataError):
        RawSample("/x", 2)


def test_generator_spec_validation():
    with pytest.raises(ConfigError):
        GeneratorSpec(5, 0.4, seed=0).validate()
    with pytest.raises(ConfigError):
        GeneratorSpec(100, 1.5, seed=0).validate()
    with pytest.raises(ConfigError):
        GeneratorSpec(100, 0.4, seed=0, template_families=("sqli",)).validate()
    with pytest.raises(ConfigError):
        GeneratorSpec(100, 0.4, seed=0, template_families=("nope", "sqli")).validate()


def test_generate_deterministic():
    a = generate_synthetic(GeneratorSpec(200, 0.4, seed=3))
    b = generate_synthetic(GeneratorSpec(200, 0.4, seed=3))
    for split in ("train", "test", "dev"):
        assert a.split(split) == b.split(split)


def test_generate_seed_changes_output():
    a = generate_synthetic(GeneratorSpec(200, 0.4, seed=3))
    b = generate_synthetic(GeneratorSpec(200, 0.4, seed=4))
    assert a.train != b.train


def test_generate_split_sizes_and_fractions():
    ds = generate_synthetic(GeneratorSpec(1000, 0.4, seed=1))
    assert [len(ds.train), len(ds.test), len(ds.dev)] == [800, 100, 100]
    for split in ("train", "test", "dev"):
        assert ds.attack_fraction(split) == pytest.approx(0.4, abs=0.01)


def test_generate_unique_texts():
    ds = generate_synthetic(GeneratorSpec(500, 0.4, seed=2))
    texts = [s.text for s in ds.train + ds.test + ds.dev]
    assert len(texts) == len(set(texts))


def test_attack_texts_support_all_triggers():
    # Every attack sample starts with '/', has >= 2 slashes and a mappable
    # homoglyph source letter, so DBS/RFR/HLR apply to all of them.
    ds = generate_synthetic(GeneratorSpec(500, 0.4, seed=2))
    for s in ds.train + ds.test + ds.dev:
        if s.label == ATTACK:
            assert s.text.startswith("/")
            assert s.text.count("/") >= 2
            assert any(c in s.text for c in "taeoi")


def test_split_dataset_stratified_tiny():
    samples = [RawSample(f"/a/{i}", ATTACK) for i in range(4)]
    samples += [RawSample(f"/b/{i}", NORMAL) for i in range(6)]
    ds = split_dataset(samples, (0.8, 0.1, 0.1), seed=0)
    assert [len(ds.train), len(ds.test), len(ds.dev)] == [8, 1, 1]


def test_split_dataset_dedupes_by_text():
    samples = [RawSample("/dup", ATTACK)] * 5 + [
        RawSample(f"/x/{i}", NORMAL) for i in range(15)
    ]
    ds = split_dataset(samples, (0.8, 0.1, 0.1), seed=0)
    assert len(ds.train) + len(ds.test) + len(ds.dev) == 16


def test_split_dataset_rejects_bad_ratios():
    samples = [RawSample(f"/x/{i}", NORMAL) for i in range(20)]
    with pytest.raises(ConfigError):
        split_dataset(samples, (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(ConfigError):
        split_dataset(samples[:2], (0.8, 0.1, 0.1), seed=0)
    with pytest.raises(DataError):
        split_dataset([], (0.8, 0.1, 0.1), seed=0)


def test_stats_shape():
    ds = generate_synthetic(GeneratorSpec(100, 0.3, seed=0))
    stats = ds.stats()
    assert [row["split"] for row in stats] == ["train", "test", "dev"]
    assert sum(row["total"] for row in stats) == 100


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_save_load_round_trip(tmp_path, fmt):
    ds = generate_synthetic(GeneratorSpec(100, 0.4, seed=5))
    out = tmp_path / "data"
    save_dataset(ds, out, fmt)
    loaded = load_dataset(out, fmt, name=ds.name)
    for split in ("train", "test", "dev"):
        assert loaded.split(split) == ds.split(split)
    stats = json.loads((out / "stats.json").read_text())
    assert stats["splits"] == ds.stats()


def test_load_samples_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "/a", "label": 0}\nnot json\n')
    with pytest.raises(DataError, match=r":2:"):
        load_samples(path, "jsonl")

    path.write_text('{"text": "/a", "label": 7}\n')
    with pytest.raises(DataError, match=r":1:.*label"):
        load_samples(path, "jsonl")

    path.write_text('{"text": "/a"}\n')
    with pytest.raises(DataError, match=r":1:"):
        load_samples(path, "jsonl")


def test_load_samples_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_samples(tmp_path / "nope.jsonl", "jsonl")
    with pytest.raises(ConfigError):
        load_samples(tmp_path / "x", "xml")


def test_load_dataset_requires_directory(tmp_path):
    with pytest.raises(DataError, match="directory"):
        load_dataset(tmp_path / "nope")


def test_dataset_split_accessor():
    ds = Dataset("d", [RawSample("/a", 0)], [RawSample("/b", 1)], [RawSample("/c", 0)])
    assert ds.split("test")[0].label == ATTACK
    with pytest.raises(KeyError):
        ds.split("validation")
