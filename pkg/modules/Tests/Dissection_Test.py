import numpy as np
import pandas as pd
import pytest

from modules.Modules.Dissection import (ConceptCorpus, chance_detectors, collect_profiles, count_unique_concepts,
                                        find_detectors, generate_concept_corpus, iou_table, unit_concept_iou)
from modules.Modules.Dissection.Detectors import DetectorRecord, IoUTable, detector_rate, export_detectors
from modules.Modules.Dissection.Profiles import profiles_from_activations
from modules.Modules.Harness import ModelCheckpoint
from modules.Modules.Harness.Network import ArchConfig, build_model
from modules.Modules.Harness.SceneGenerator import concept_table
from modules.Modules.Stages import CheckpointSet, Dissection_Module
from modules.PipeLine.BasePipeLine import PipeLine, RunContext
from modules.utils.Errors import InvalidArgument, MissingArtifact
from modules.utils.RecordStore import RecordStore


def _concept_id(category, name):
    return next(c.id for c in concept_table() if c.category == category and c.name == name)


def _noise_corpus(count=20, size=16, seed=0):
    gen = np.random.default_rng(seed)
    table = concept_table()
    masks = np.zeros((count, len(table), size, size), dtype=bool)
    masks[:, _concept_id("color", "gray")] = True
    return ConceptCorpus(images=gen.random((count, 3, size, size), dtype=np.float32), masks=masks, concepts=table)


def test_uniform_activations_give_top_percentile_threshold():
    activations = np.random.default_rng(0).random((2, 100000))
    profiles = profiles_from_activations(activations)
    for profile in profiles:
        assert profile.threshold == pytest.approx(0.99, abs=0.005)
        assert not profile.degenerate
        assert profile.count == 100000


def test_constant_unit_is_degenerate():
    profiles = profiles_from_activations(np.vstack([np.zeros(50), np.arange(50.0)]))
    assert profiles[0].degenerate and not profiles[1].degenerate
    with pytest.raises(InvalidArgument):
        profiles_from_activations(np.zeros((2, 0)))


def test_planted_color_unit_is_found(planted_corpus, color_unit):
    layer = color_unit[0]
    profiles = collect_profiles(color_unit, layer, planted_corpus)
    assert profiles[0].threshold == pytest.approx(0.0, abs=1e-6)
    records = find_detectors(color_unit, layer, planted_corpus, iou_threshold=0.04, profiles=profiles)
    assert len(records) == 1
    record = records[0]
    assert record.category == "color" and record.name == "red"
    assert record.iou >= 0.9
    direct = unit_concept_iou(color_unit, 0, profiles[0], planted_corpus, _concept_id("color", "red"), layer=layer)
    assert direct == pytest.approx(record.iou)


def test_planted_unit_coverage_and_all_mode(planted_corpus, color_unit):
    layer = color_unit[0]
    profiles = collect_profiles(color_unit, layer, planted_corpus)
    table = iou_table(color_unit, layer, profiles, planted_corpus)
    assert table.coverage[0] == pytest.approx(960 / (100 * 32 * 32))
    assert table.iou[0, _concept_id("object", "square")] == pytest.approx(0.6)
    every = find_detectors(color_unit, layer, planted_corpus, mode="all", table=table)
    assert {r.name for r in every} == {"red", "square"}
    assert count_unique_concepts(every) == {"object": 1, "part": 0, "material": 0, "color": 1}
    with pytest.raises(InvalidArgument):
        find_detectors(color_unit, layer, planted_corpus, mode="first", table=table)


def test_unit_coverage_is_one_percent_on_continuous_activations():
    corpus = _noise_corpus()
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    profiles = collect_profiles(model, "conv1", corpus)
    table = iou_table(model, "conv1", profiles, corpus)
    live = [p.unit for p in profiles if not p.degenerate]
    assert live
    for unit in live:
        assert table.coverage[unit] == pytest.approx(0.01, abs=0.005)


def test_random_network_stays_near_chance_level():
    corpus = generate_concept_corpus(16, 200, seed=0)
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=5).eval()
    profiles = collect_profiles(model, "stage3", corpus)
    table = iou_table(model, "stage3", profiles, corpus)
    chance = chance_detectors(table, corpus, iou_threshold=0.04)
    assert detector_rate(chance, len(profiles)) <= 0.05
    assert np.all(table.chance_iou >= 0.0) and np.all(table.chance_iou < 1.0)


def test_planted_detector_is_far_above_chance(planted_corpus, color_unit):
    layer = color_unit[0]
    profiles = collect_profiles(color_unit, layer, planted_corpus)
    table = iou_table(color_unit, layer, profiles, planted_corpus)
    red = _concept_id("color", "red")
    assert table.iou[0, red] > 0.5
    # 红块位置随机，只看空间分布时交集远小于真实交集
    assert table.chance_iou[0, red] < 0.1
    assert chance_detectors(table, planted_corpus, iou_threshold=0.2) == []
    with pytest.raises(InvalidArgument):
        IoUTable(intersection=table.intersection, union=table.union, coverage=table.coverage).chance_iou


def test_null_baseline_records_the_random_network(tiny_config):
    arch = ArchConfig(depth=8, widths=[4, 8, 16])
    trained = build_model(arch, seed=11)
    checkpoint = ModelCheckpoint(arch=arch, state_dict=trained.state_dict(), metadata={"augmentation": "baseline"})
    ctx = RunContext(tiny_config, null_baseline=True)
    batch = PipeLine.create_pipeline(Dissection_Module, context=ctx).GetService(
        CheckpointSet({ctx.model_id("baseline"): checkpoint}))
    by_metric = {r.metric: r for r in batch.records if r.model_id == "random-s0"}

    corpus = generate_concept_corpus(tiny_config.image_size, tiny_config.corpus_size, tiny_config.seed)
    random_model = build_model(arch, seed=tiny_config.seed).eval()
    profiles = collect_profiles(random_model, None, corpus, resolution=tiny_config.quantile_resolution)
    table = iou_table(random_model, None, profiles, corpus)
    expected = find_detectors(random_model, None, corpus, iou_threshold=tiny_config.iou_threshold,
                              mode=tiny_config.detector_mode, table=table)
    chance = chance_detectors(table, corpus, iou_threshold=tiny_config.iou_threshold, mode=tiny_config.detector_mode)
    assert by_metric["null_detector_rate"].value == pytest.approx(detector_rate(expected, len(profiles)))
    assert by_metric["null_detector_rate"].extra["detectors"] == len(expected)
    assert by_metric["chance_detector_rate"].value == pytest.approx(detector_rate(chance, len(profiles)))
    trained_row = next(r for r in batch.records if r.metric == "detector_units")
    assert "chance_rate" in trained_row.extra
    assert RecordStore(ctx.path("records.jsonl")).records(ctx.run_id)


def test_feature_resolution_profiles():
    corpus = generate_concept_corpus(16, 4, seed=1)
    model = build_model(ArchConfig(depth=8, widths=[4, 8, 16]), seed=0).eval()
    coarse = collect_profiles(model, "stage3", corpus, resolution="feature")
    fine = collect_profiles(model, "stage3", corpus, resolution="input")
    assert coarse[0].count == 4 * 4 * 4
    assert fine[0].count == 4 * 16 * 16


def test_generated_corpus_is_reproducible_and_consistent():
    first = generate_concept_corpus(16, 5, seed=3)
    second = generate_concept_corpus(16, 5, seed=3)
    np.testing.assert_array_equal(first.images, second.images)
    np.testing.assert_array_equal(first.masks, second.masks)
    gray = _concept_id("color", "gray")
    # 每个像素要么是背景灰色，要么属于某个物体
    objects = first.masks[:, [c.id for c in first.concepts if c.category == "object"]].any(axis=1)
    assert np.all(first.masks[:, gray] ^ objects)


def test_corpus_round_trip(tmp_path):
    corpus = generate_concept_corpus(16, 3, seed=2)
    corpus.save(str(tmp_path / "corpus"))
    loaded = ConceptCorpus.load(str(tmp_path / "corpus"))
    np.testing.assert_array_equal(loaded.images, corpus.images)
    np.testing.assert_array_equal(loaded.masks, corpus.masks)
    assert loaded.concepts == corpus.concepts
    with pytest.raises(MissingArtifact):
        ConceptCorpus.load(str(tmp_path / "absent"))


def test_corpus_validation():
    corpus = _noise_corpus(count=2)
    with pytest.raises(InvalidArgument):
        corpus.concept(len(corpus.concepts))
    with pytest.raises(InvalidArgument):
        ConceptCorpus(images=corpus.images, masks=corpus.masks[:, :3], concepts=corpus.concepts)


def test_detector_summary_helpers(tmp_path):
    records = [DetectorRecord(0, 1, "circle", "object", 0.2), DetectorRecord(1, 1, "circle", "object", 0.1),
               DetectorRecord(2, 13, "green", "color", 0.05)]
    assert count_unique_concepts(records) == {"object": 1, "part": 0, "material": 0, "color": 1}
    assert detector_rate(records, 6) == pytest.approx(0.5)
    assert detector_rate([], 0) == 0.0
    path = str(tmp_path / "detectors.csv")
    export_detectors(records, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["unit", "concept", "name", "category", "iou"]
    assert len(frame) == 3
