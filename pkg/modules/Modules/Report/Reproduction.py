import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import pandas as pd

from modules.Modules.Report.Tables import ranking
from modules.utils.logger import get_logger

logger = get_logger("Reproduction")


@dataclass
class Direction:
    """期望的方向：某个方案在某个指标上排第一"""
    name: str
    metric: str
    expected_first: str


EXPECTED_DIRECTIONS = [
    Direction("cutout_first_inter_model_deletion", "inter_model_deletion", "cutout"),
    Direction("baseline_first_energy_pg", "energy_pg", "baseline"),
]


@dataclass
class DirectionResult:
    name: str
    metric: str
    expected_first: str
    observed_first: Dict[int, str] = field(default_factory=dict)
    hits: int = 0
    required: int = 0
    passed: bool = False


def required_hits(n_seeds: int) -> int:
    """三个种子里至少两个"""
    return max(1, math.ceil(2 * n_seeds / 3))


def check_directions(frames: Dict[int, pd.DataFrame], n_seeds: int = None,
                     directions: List[Direction] = EXPECTED_DIRECTIONS) -> List[DirectionResult]:
    """
    逐种子检查方向，方法维度取平均后排序

    Args:
        frames: 种子 -> 该种子运行的记录表，失败的种子不在其中
        n_seeds: 计划的种子数，决定需要符合的种子数
    """
    results = []
    for direction in directions:
        result = DirectionResult(direction.name, direction.metric, direction.expected_first,
                                 required=required_hits(n_seeds or len(frames)))
        for seed, frame in sorted(frames.items()):
            order = ranking(frame, direction.metric)
            result.observed_first[seed] = order[0] if order else "n/a"
        result.hits = sum(first == direction.expected_first for first in result.observed_first.values())
        result.passed = result.hits >= result.required
        results.append(result)
    return results


def write_reproduction(results: List[DirectionResult], out_dir: str, run_ids: Dict[int, str]) -> Dict[str, str]:
    """写 reproduction.json 和 reproduction.md，只报告，不抛错"""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "reproduction.json")
    md_path = os.path.join(out_dir, "reproduction.md")
    payload = {"run_ids": {str(k): v for k, v in run_ids.items()}, "directions": [asdict(r) for r in results]}
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, default=str)

    lines = ["# Directional reproduction", "",
             "| direction | expected first | observed first per seed | hits | result |",
             "|---|---|---|---|---|"]
    for r in results:
        observed = ", ".join(f"s{seed}: {first}" for seed, first in sorted(r.observed_first.items()))
        lines.append(f"| {r.metric} | {r.expected_first} | {observed} | {r.hits}/{r.required} "
                     f"| {'pass' if r.passed else 'fail'} |")
    lines += ["", "Runs: " + ", ".join(f"s{seed} = {run_id}" for seed, run_id in sorted(run_ids.items())), ""]
    with open(md_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))

    for r in results:
        logger.info(f"[Reproduce] {r.name}: {r.hits}/{len(r.observed_first)} 个种子符合，{'通过' if r.passed else '未通过'}")
    return {"json": json_path, "markdown": md_path}
