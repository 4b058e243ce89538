import os
import threading
import time

import pytest
import torch
from ruamel.yaml import YAML

import Experiment
from modules.Modules.BaseConfig import AUGMENTATIONS, ExperimentConfig
from modules.Modules.Harness import ModelCheckpoint
from modules.Modules.Stages import Report_Module, Train_Module
from modules.PipeLine.BasePipeLine import PipeLine, RunContext
from modules.utils.Errors import InvalidArgument
from modules.utils.RecordStore import RecordStore


def _write(path, data):
    with open(path, "w", encoding="utf-8") as f:
        YAML().dump(data, f)
    return str(path)


def test_pipeline_rejects_unlinked_stages(tiny_config):
    with pytest.raises(InvalidArgument, match="Train_Module.*Report_Module"):
        PipeLine.create_pipeline(Train_Module, Report_Module, context=RunContext(tiny_config))
    with pytest.raises(InvalidArgument):
        PipeLine.create_pipeline(context=RunContext(tiny_config))


def test_run_context_identifiers(tiny_config):
    ctx = RunContext(tiny_config)
    assert ctx.run_id.endswith("-s0") and len(ctx.run_id) == 13
    assert ctx.model_id("cutmix") == "cutmix-s0"
    assert ctx.with_seed(2).run_id.endswith("-s2")
    assert ctx.with_seed(2).hash != ctx.hash


def test_filters_do_not_change_the_run_id(tiny_config):
    full = RunContext(tiny_config)
    filtered = RunContext(tiny_config, methods=["gradcam"], augmentations=["cutout", "baseline"])
    assert filtered.run_id == full.run_id
    assert filtered.methods == ["gradcam"]
    # 保持配置里的顺序
    assert filtered.augmentations == ["baseline", "cutout"]
    assert full.methods == list(tiny_config.methods)
    reseeded = filtered.with_seed(3)
    assert reseeded.methods == ["gradcam"] and reseeded.augmentations == ["baseline", "cutout"]


def test_filter_outside_the_config_is_rejected(tiny_config):
    config = tiny_config.model_copy(update={"methods": ["gradcam"]})
    with pytest.raises(InvalidArgument):
        RunContext(config, methods=["iba"])
    with pytest.raises(InvalidArgument):
        RunContext(tiny_config, augmentations=["mixup", "autoaugment"])


def test_evaluation_before_attribution_is_missing_artifact(tiny_config_file):
    assert Experiment.main(["eval-align", "--config", tiny_config_file]) == 3


def test_unknown_config_key_exits_with_two(tmp_path):
    path = _write(tmp_path / "bad.yaml", {"seed": 0, "optimizer": "adam"})
    assert Experiment.main(["train", "--config", path]) == 2


def test_unknown_criterion_exits_with_two(tiny_config_file):
    assert Experiment.main(["evaluate", "--config", tiny_config_file, "--criteria", "fidelity"]) == 2


def test_report_without_records_exits_with_three(tiny_config_file):
    assert Experiment.main(["report", "--config", tiny_config_file]) == 3


def _record_rows(out_dir):
    rows = [r.model_dump(exclude={"timestamp"}) for r in RecordStore(os.path.join(out_dir, "records.jsonl")).records()]
    return sorted(rows, key=lambda r: (r["model_id"], r["method"] or "", r["metric"]))


@pytest.mark.slow
def test_training_and_evaluation_are_reproducible(tiny_config_file, tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        assert Experiment.main(["train", "--config", tiny_config_file, "--out", out]) == 0
        assert Experiment.main(["evaluate", "--config", tiny_config_file, "--out", out]) == 0
        outputs.append(out)
    first, second = (ModelCheckpoint.load(os.path.join(out, "checkpoints", "mixup-s0.pt")).model() for out in outputs)
    for a, b in zip(first.state_dict().values(), second.state_dict().values()):
        assert torch.equal(a, b)
    rows = [_record_rows(out) for out in outputs]
    assert len(rows[0]) > 0
    assert rows[0] == rows[1]


@pytest.mark.slow
def test_tiny_end_to_end_run(tiny_config_file, tiny_config):
    assert Experiment.main(["train", "--config", tiny_config_file]) == 0
    assert Experiment.main(["evaluate", "--config", tiny_config_file]) == 0
    assert Experiment.main(["report", "--config", tiny_config_file]) == 0

    ctx = RunContext(tiny_config)
    records = RecordStore(ctx.path("records.jsonl")).records(ctx.run_id)
    alignment = [r for r in records if r.metric in ("energy_pg", "ehr", "wsol_iou")]
    assert len(alignment) == len(AUGMENTATIONS) * 2 * 3
    assert all(r.se is not None for r in alignment)
    faithfulness = [r for r in records if r.metric.startswith("inter_model_")]
    assert len(faithfulness) == len(AUGMENTATIONS) * 2 * 2
    assert {r.metric for r in records} >= {"top1", "detector_units", "unique_concepts_color"}

    report_dir = ctx.path("reports", ctx.run_id)
    for name in ("alignment.csv", "wsol.csv", "inter_model_deletion.csv", "inter_model_insertion.csv",
                 "concepts.csv", "curves_gradcam.svg", "curves_iba.svg", "qualitative_gradcam.svg"):
        assert os.path.exists(os.path.join(report_dir, name)), name
    assert len(ctx.samples.rows(run_id=ctx.run_id)) == tiny_config.eval_samples

    # 评估阶段可以只读落盘的归因图重跑
    assert Experiment.main(["eval-align", "--config", tiny_config_file]) == 0


def test_cli_filters_keep_the_config(tiny_config_file, tmp_path):
    args = Experiment.build_parser().parse_args(["attribute", "--config", tiny_config_file, "--seed", "4",
                                                 "--method", "iba", "--models", "baseline,cutout",
                                                 "--out", str(tmp_path / "o")])
    ctx = Experiment.make_context(args)
    assert ctx.config.seed == 4
    assert ctx.methods == ["iba"] and ctx.augmentations == ["baseline", "cutout"]
    assert ctx.config.methods == ["gradcam", "iba"]
    assert list(ctx.config.augmentations) == list(AUGMENTATIONS)
    assert Experiment.regimes(ctx).augmentations == ["baseline", "cutout"]
    assert ctx.out_dir == os.path.abspath(str(tmp_path / "o"))
    assert isinstance(ctx.config, ExperimentConfig)

    unfiltered = Experiment.make_context(Experiment.build_parser().parse_args(
        ["attribute", "--config", tiny_config_file, "--seed", "4"]))
    assert unfiltered.run_id == ctx.run_id


def test_unknown_model_filter_exits_with_two(tiny_config_file):
    assert Experiment.main(["train", "--config", tiny_config_file, "--models", "autoaugment"]) == 2


@pytest.mark.slow
def test_filtered_evaluation_reads_unfiltered_attributions(tiny_config_file, tiny_config):
    assert Experiment.main(["train", "--config", tiny_config_file]) == 0
    assert Experiment.main(["attribute", "--config", tiny_config_file]) == 0
    assert Experiment.main(["eval-align", "--config", tiny_config_file, "--method", "gradcam"]) == 0
    assert Experiment.main(["eval-faith", "--config", tiny_config_file, "--models", "baseline,cutout"]) == 0

    ctx = RunContext(tiny_config)
    records = RecordStore(ctx.path("records.jsonl")).records(ctx.run_id)
    alignment = [r for r in records if r.metric == "energy_pg"]
    assert {r.method for r in alignment} == {"gradcam"}
    assert len(alignment) == len(AUGMENTATIONS)
    faithfulness = [r for r in records if r.metric == "inter_model_deletion"]
    assert {r.model_id for r in faithfulness} == {"baseline-s0", "cutout-s0"}
    assert {r.method for r in faithfulness} == {"gradcam", "iba"}


def test_fan_out_is_bounded_and_ordered(tiny_config):
    pipeline = PipeLine.create_pipeline(Train_Module, context=RunContext(tiny_config))
    lock = threading.Lock()
    state = {"running": 0, "peak": 0}

    def work(item):
        with lock:
            state["running"] += 1
            state["peak"] = max(state["peak"], state["running"])
        time.sleep(0.01)
        with lock:
            state["running"] -= 1
        return item * 2

    assert pipeline.fan_out(work, range(12)) == [i * 2 for i in range(12)]
    assert 1 <= state["peak"] <= tiny_config.workers
