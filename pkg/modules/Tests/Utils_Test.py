import threading

import numpy as np
import pytest

from modules.utils.Errors import InvalidArgument, MissingArtifact, NoData
from modules.utils.RecordStore import JsonlStore, RecordStore, ResultRecord
from modules.utils.TensorFile import read_tensor, write_tensor
from modules.utils.logger import ROOT_NAME, get_logger


def _record(metric="energy_pg", value=0.5, run_id="abc-s0", model_id="baseline-s0", method="gradcam"):
    return ResultRecord(run_id=run_id, config_hash="abc", model_id=model_id, method=method, metric=metric, value=value)


def test_tensor_file_layout(tmp_path):
    path = str(tmp_path / "x" / "map.tensor")
    values = np.arange(6, dtype=np.float64).reshape(2, 3)
    write_tensor(path, values, {"method": "gradcam"})
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    assert header_line.endswith(b"\n")
    assert len(payload) == 6 * 4
    assert np.frombuffer(payload, dtype="<f4")[5] == 5.0
    array, header = read_tensor(path)
    assert header["shape"] == [2, 3] and header["method"] == "gradcam"
    assert array.dtype == np.float32
    np.testing.assert_array_equal(array, values)


def test_tensor_file_errors(tmp_path):
    with pytest.raises(MissingArtifact):
        read_tensor(str(tmp_path / "absent.tensor"))
    path = str(tmp_path / "short.tensor")
    write_tensor(path, np.zeros(4))
    with open(path, "ab") as f:
        f.write(b"\x00\x00")
    with pytest.raises(InvalidArgument):
        read_tensor(path)


def test_record_store_keeps_latest_per_key(tmp_path):
    store = RecordStore(str(tmp_path / "records.jsonl"))
    store.add_records([_record(value=0.1), _record(value=0.2), _record(metric="ehr", value=0.3),
                       _record(run_id="other-s1", value=0.9)])
    latest = store.records("abc-s0")
    assert sorted((r.metric, r.value) for r in latest) == [("ehr", 0.3), ("energy_pg", 0.2)]
    assert len(store.records("abc-s0", latest=False)) == 3
    assert len(store.records()) == 3


def test_record_store_require(tmp_path):
    store = RecordStore(str(tmp_path / "records.jsonl"))
    with pytest.raises(NoData) as info:
        store.require("abc-s0")
    assert info.value.exit_code == 3


def test_record_allows_missing_value(tmp_path):
    store = RecordStore(str(tmp_path / "records.jsonl"))
    store.add_record(_record(metric="gain_ratio", value=None))
    assert store.records("abc-s0")[0].value is None


def test_jsonl_store_concurrent_writes(tmp_path):
    store = JsonlStore(str(tmp_path / "rows.jsonl"))

    def write(worker):
        for i in range(50):
            store.add_chunk({"worker": worker, "i": i})

    threads = [threading.Thread(target=write, args=(w,)) for w in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(store.rows()) == 200
    assert len(store.rows(worker=2)) == 50


def test_logger_namespace():
    logger = get_logger("Anything")
    assert logger.name == f"{ROOT_NAME}.Anything"
    assert get_logger("Anything") is logger
    assert len(logger.handlers) == 2
