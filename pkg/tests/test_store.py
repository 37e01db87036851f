import json

import numpy as np
import pytest

from riccati_opnet import datagen, store
from riccati_opnet.errors import (ArchitectureMismatch, ChecksumMismatch, CorruptRecord,
                                  SchemaVersionMismatch)
from riccati_opnet.opnet import DeepOnetModel, ProgressiveModel


@pytest.fixture(scope="module")
def are_ds():
    return datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=3, count=10), seed=4)


def test_dataset_round_trip_bitwise(tmp_path, are_ds):
    path = tmp_path / "d.jsonl"
    store.write_dataset(are_ds, path)
    back = store.read_dataset(path)
    assert back.n_train == are_ds.n_train
    for a, b in zip(are_ds.records, back.records):
        assert np.array_equal(a.target, b.target)
        assert np.array_equal(a.encoding, b.encoding)
        assert np.array_equal(a.system.A, b.system.A)
        assert a.label == b.label and a.index == b.index
    store.write_dataset(back, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_dre_dataset_round_trip(tmp_path):
    ds = datagen.build_dataset(datagen.GeneratorConfig(kind="dre", n=2, count=2), seed=0)
    store.write_dataset(ds, tmp_path / "d.jsonl")
    back = store.read_dataset(tmp_path / "d.jsonl")
    for a, b in zip(ds.records, back.records):
        assert np.array_equal(a.target, b.target)
        assert np.array_equal(a.system.A_at(0.3), b.system.A_at(0.3))


def test_empty_dataset_round_trip(tmp_path, are_ds):
    empty = datagen.Dataset([], are_ds.metadata, 0)
    store.write_dataset(empty, tmp_path / "e.jsonl")
    assert len((tmp_path / "e.jsonl").read_text().splitlines()) == 1
    assert store.read_dataset(tmp_path / "e.jsonl").records == []


def test_truncated_dataset(tmp_path, are_ds):
    path = tmp_path / "d.jsonl"
    store.write_dataset(are_ds, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:4] + [lines[4][: len(lines[4]) // 2]]) + "\n")
    with pytest.raises(CorruptRecord) as info:
        store.read_dataset(path)
    assert info.value.line == 5
    path.write_text("\n".join(lines[:4]) + "\n")
    with pytest.raises(CorruptRecord):
        store.read_dataset(path)


def test_schema_version_checked(tmp_path, are_ds):
    path = tmp_path / "d.jsonl"
    store.write_dataset(are_ds, path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["schema_version"] = 2
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(SchemaVersionMismatch):
        store.read_dataset(path)


def _probe(model, rng):
    return model.predict(rng.standard_normal((4, model.input_width)))


def test_model_round_trip(tmp_path, rng):
    m = DeepOnetModel(3, [36, 16, 8], [2, 8], seed=5)
    m.fit_normalization(rng.standard_normal((10, 36)), rng.standard_normal((10, 3, 3)))
    store.save_model(m, tmp_path / "m.json", extra={"final_test_loss": 0.1})
    back, doc = store.load_model(tmp_path / "m.json")
    probe = np.random.default_rng(0)
    assert np.array_equal(_probe(m, probe), _probe(back, np.random.default_rng(0)))
    assert doc["extra"]["final_test_loss"] == 0.1


def test_flipped_byte_refused(tmp_path):
    m = DeepOnetModel(3, [36, 16, 8], [2, 8], seed=5)
    path = tmp_path / "m.json"
    store.save_model(m, path)
    doc = json.loads(path.read_text())
    data = doc["model"]["params"][0]["data"]
    i = len(data) // 2
    flipped = "A" if data[i] != "A" else "B"
    doc["model"]["params"][0]["data"] = data[:i] + flipped + data[i + 1:]
    path.write_text(json.dumps(doc))
    with pytest.raises(ChecksumMismatch):
        store.load_model(path)


def test_architecture_mismatch(tmp_path):
    m = DeepOnetModel(3, [36, 16, 8], [2, 8], seed=5)
    path = tmp_path / "m.json"
    store.save_model(m, path)
    with pytest.raises(ArchitectureMismatch):
        store.load_model(path, expect={"kind": "deeponet"})
    doc = json.loads(path.read_text())
    doc["model"]["architecture"]["branch_widths"] = [36, 12, 8]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArchitectureMismatch):
        store.load_model(path)


def test_progressive_checkpoint(tmp_path, rng):
    core = DeepOnetModel(3, [36, 16, 8], [2, 8], seed=1)
    prog = ProgressiveModel(core, n=4, input_width=64, views=2, seed=2)
    store.save_model(prog, tmp_path / "p.json")
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["core"]["frozen"] is True
    back, _ = store.load_model(tmp_path / "p.json")
    assert isinstance(back, ProgressiveModel)
    x = rng.standard_normal((3, 64))
    assert np.array_equal(prog.predict(x), back.predict(x))
