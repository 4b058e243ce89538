from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from modules.Modules.Attribution import AttributionMap
from modules.Modules.BaseConfig import ExperimentConfig
from modules.Modules.Faithfulness import (FaithfulnessSettings, ReplacementPolicy, ScoreCurve, deletion_curve,
                                          evaluate_faithfulness, insertion_curve, inter_model_score, rank_grids,
                                          rao_mean_curve)
from modules.Modules.Faithfulness.Curves import aggregate
from modules.Tests.Doubles import LinearScorer, SigmoidScorer
from modules.utils.Errors import InvalidArgument, OracleFailure

TOY_IMAGE = np.array([[[0.1, 0.2], [0.3, 0.4]]], dtype=np.float32)
TOY_MAP = np.array([[4.0, 3.0], [2.0, 1.0]])
ZERO_FILL = ReplacementPolicy("mean", channel_mean=np.zeros(1, dtype=np.float32))


class BrokenScorer:
    def score(self, images, target_class):
        raise RuntimeError("设备不可用")

    def predict(self, image):
        return 0


def test_rank_grids_orders_and_ties():
    ranking = rank_grids(TOY_MAP, 1, "LeRF")
    assert ranking.order.tolist() == [3, 2, 1, 0]
    assert rank_grids(TOY_MAP, 1, "MoRF").order.tolist() == [0, 1, 2, 3]
    flat = np.ones((2, 2))
    assert rank_grids(flat, 1, "LeRF").order.tolist() == [0, 1, 2, 3]
    assert rank_grids(flat, 1, "MoRF").order.tolist() == [0, 1, 2, 3]


def test_rank_grids_cell_sums_and_partial_cells():
    values = np.ones((10, 10))
    ranking = rank_grids(values, 4, "LeRF")
    assert ranking.partial
    assert ranking.n_cells == 9
    assert ranking.row_edges.tolist() == [0, 4, 8, 10]
    assert ranking.cell_sums.tolist() == [16, 16, 8, 16, 16, 8, 8, 8, 4]
    # 右下角的残缺格子和最小，其次是边上的格子，按编号排
    assert ranking.order.tolist() == [8, 2, 5, 6, 7, 0, 1, 3, 4]
    rows, cols = ranking.cell_slices(8)
    assert (rows.start, rows.stop, cols.start, cols.stop) == (8, 10, 8, 10)


def test_rank_grids_partition_mode():
    ranking = rank_grids(np.ones((10, 10)), 3, "LeRF", mode="partition")
    assert ranking.n_cells == 9 and not ranking.partial
    assert ranking.row_edges.tolist() == [0, 4, 7, 10]


def test_rank_grids_random_order_is_a_permutation(rng):
    ranking = rank_grids(np.ones((8, 8)), 2, "RaO", rng=rng)
    assert sorted(ranking.order.tolist()) == list(range(16))


@pytest.mark.parametrize("kwargs", [dict(cell_px=0, ordering="LeRF"), dict(cell_px=2, ordering="Top"),
                                    dict(cell_px=2, ordering="RaO")])
def test_rank_grids_invalid_arguments(kwargs):
    with pytest.raises(InvalidArgument):
        rank_grids(np.ones((4, 4)), **kwargs)


def test_replacement_policy():
    image = np.stack([np.full((2, 2), 0.2), np.full((2, 2), 0.6)]).astype(np.float32)
    fill = ReplacementPolicy("image_mean").fill_for(image)
    np.testing.assert_allclose(fill[:, 0, 0], [0.2, 0.6])
    with pytest.raises(InvalidArgument):
        ReplacementPolicy("mean")
    with pytest.raises(InvalidArgument):
        ReplacementPolicy("mean", channel_mean=np.zeros(3)).fill_for(image)


def test_deletion_brute_force_on_linear_scorer():
    scorer = LinearScorer(np.full((1, 2, 2), 0.5))
    curve = deletion_curve(scorer, TOY_IMAGE, rank_grids(TOY_MAP, 1, "LeRF"), ZERO_FILL, target=0)
    np.testing.assert_allclose(curve.x, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(curve.y, [1.0, 0.6, 0.3, 0.1, 0.0], atol=1e-6)


def test_insertion_brute_force_on_linear_scorer():
    scorer = LinearScorer(np.full((1, 2, 2), 0.5))
    curve = insertion_curve(scorer, TOY_IMAGE, rank_grids(TOY_MAP, 1, "MoRF"), ZERO_FILL, target=0)
    np.testing.assert_allclose(curve.y, [0.0, 0.1, 0.3, 0.6, 1.0], atol=1e-6)
    assert curve.auc() == pytest.approx(0.25 * (0.1 + 0.3 + 0.6 + 0.5), abs=1e-6)


def test_curve_stride_keeps_last_step():
    scorer = LinearScorer(np.full((1, 2, 2), 0.5))
    curve = deletion_curve(scorer, TOY_IMAGE, rank_grids(TOY_MAP, 1, "LeRF"), ZERO_FILL, target=0, stride=3)
    np.testing.assert_allclose(curve.x, [0.0, 0.75, 1.0])
    np.testing.assert_allclose(curve.y, [1.0, 0.1, 0.0], atol=1e-6)


def test_curve_rejects_mismatched_grid():
    with pytest.raises(InvalidArgument):
        deletion_curve(LinearScorer(np.ones((1, 4, 4))), np.zeros((1, 4, 4)), rank_grids(TOY_MAP, 1, "LeRF"),
                       ZERO_FILL, target=0)


def test_oracle_exception_becomes_oracle_failure():
    with pytest.raises(OracleFailure) as info:
        deletion_curve(BrokenScorer(), TOY_IMAGE, rank_grids(TOY_MAP, 1, "LeRF"), ZERO_FILL, target=0)
    assert info.value.exit_code == 4


def test_aggregate_mean_and_standard_error():
    x = np.array([0.0, 1.0])
    curve = aggregate([ScoreCurve(x, np.array([1.0, 0.0])), ScoreCurve(x, np.array([1.0, 1.0]))])
    np.testing.assert_allclose(curve.y, [1.0, 0.5])
    np.testing.assert_allclose(curve.se, [0.0, 0.5])
    assert len(curve.to_rows()) == 2
    with pytest.raises(InvalidArgument):
        aggregate([])


def test_rao_curve_is_independent_of_attribution(rng):
    scorer = LinearScorer(np.full((1, 2, 2), 0.5))
    curve = rao_mean_curve(scorer, TOY_IMAGE, 1, 3, rng, ZERO_FILL, "deletion", target=0)
    assert curve.y[0] == pytest.approx(1.0) and curve.y[-1] == pytest.approx(0.0)
    assert curve.se is not None and len(curve.se) == 5


def _additive_problem(count=6, size=8, seed=0):
    gen = np.random.default_rng(seed)
    weights = gen.random((1, size, size)) / (size * size)
    images = [gen.random((1, size, size)).astype(np.float32) for _ in range(count)]
    # 线性打分器下的精确贡献
    maps = [AttributionMap((weights * image)[0], 0, "exact") for image in images]
    return LinearScorer(weights), images, maps


def test_exact_attribution_beats_random_order():
    scorer, images, maps = _additive_problem()
    settings = FaithfulnessSettings(cell_px=2, n_orders=3, fill=ZERO_FILL)
    deletion = inter_model_score(scorer, images, maps, "deletion", settings, seed=1)
    insertion = inter_model_score(scorer, images, maps, "insertion", settings, seed=1)
    assert deletion.auc > 0 and insertion.auc > 0
    assert deletion.main_auc > deletion.rao_auc
    assert deletion.summary()["ordering"] == "LeRF"
    assert insertion.summary()["ordering"] == "MoRF"


def test_inter_model_score_independent_of_scheduling():
    scorer, images, maps = _additive_problem()
    settings = FaithfulnessSettings(cell_px=2, n_orders=2, fill=ZERO_FILL)
    calls = []

    def pooled_map(func, items):
        items = list(items)
        calls.append(len(items))
        with ThreadPoolExecutor(max_workers=4) as pool:
            return list(pool.map(func, items))

    single = inter_model_score(scorer, images, maps, "deletion", settings, seed=4)
    pooled = inter_model_score(scorer, images, maps, "deletion", settings, seed=4, map_func=pooled_map)
    assert calls == [len(images)]
    assert single.auc == pooled.auc
    np.testing.assert_array_equal(single.difference.y, pooled.difference.y)


def test_inter_model_score_rejects_bad_input():
    scorer, images, maps = _additive_problem(count=2)
    settings = FaithfulnessSettings(cell_px=2, fill=ZERO_FILL)
    with pytest.raises(InvalidArgument):
        inter_model_score(scorer, images, maps[:1], "deletion", settings)
    with pytest.raises(InvalidArgument):
        inter_model_score(scorer, [], [], "deletion", settings)
    with pytest.raises(InvalidArgument):
        inter_model_score(scorer, images, maps, "shuffle", settings)


def test_random_maps_score_near_zero():
    """归因图是噪声时 LeRF 与随机顺序同分布，分数应落在两倍标准误之内"""
    shape = (3, 8, 8)
    scorer = SigmoidScorer(shape, seed=11)
    gen = np.random.default_rng(12)
    images = [gen.random(shape).astype(np.float32) for _ in range(200)]
    maps = [AttributionMap(gen.random(shape[1:]), 0, "noise") for _ in images]
    settings = FaithfulnessSettings(cell_px=2, n_orders=2,
                                    fill=ReplacementPolicy("mean", channel_mean=np.full(3, 0.5, dtype=np.float32)))
    score = inter_model_score(scorer, images, maps, "deletion", settings, seed=13)
    assert abs(score.auc) / 100 < 2 * score.se


def test_evaluate_faithfulness_runs_both_modes():
    scorer, images, maps = _additive_problem(count=3)
    config = ExperimentConfig(image_size=8, cell_px=2, n_orders=2, workers=1, cutout_side=8)
    settings = FaithfulnessSettings.from_config(config, np.zeros(1, dtype=np.float32))
    result = evaluate_faithfulness(scorer, images, maps, settings, "baseline-s0", "gradcam")
    assert result.n_images == 3
    assert result.deletion.mode == "deletion" and result.insertion.mode == "insertion"
