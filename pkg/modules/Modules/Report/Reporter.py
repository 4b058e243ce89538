import os
from typing import TYPE_CHECKING, Dict, List, Optional

import pandas as pd

from modules.Modules.Attribution.AttributionMap import AttributionMap
from modules.Modules.Report.Figures import concept_bars, curves_figure, qualitative_grid
from modules.Modules.Report.Tables import alignment_table, concept_table, faithfulness_table, records_frame, wsol_table
from modules.utils.TensorFile import read_tensor
from modules.utils.logger import get_logger

if TYPE_CHECKING:
    from modules.PipeLine.BasePipeLine import RunContext

logger = get_logger("Reporter")

# 定性图里展示的样本数
QUALITATIVE_SAMPLES = 4


def _has(frame: pd.DataFrame, *metrics: str) -> bool:
    return bool(frame["metric"].isin(metrics).any())


def _write_table(table: pd.DataFrame, path: str, files: List[str]) -> None:
    table.to_csv(path)
    files.append(path)


def _qualitative(ctx: "RunContext", run_id: str, method: str, model_ids: List[str], report_dir: str) -> Optional[str]:
    samples = {row["index"]: row for row in ctx.samples.rows(run_id=run_id)}
    indices = sorted(samples)[:QUALITATIVE_SAMPLES]
    images, boxes = {}, {}
    for index in indices:
        path = ctx.sample_path(index, run_id=run_id)
        if os.path.exists(path):
            images[index], _ = read_tensor(path)
            boxes[index] = samples[index]["boxes"]
    maps: Dict[str, Dict[int, AttributionMap]] = {}
    for model_id in model_ids:
        loaded = {i: AttributionMap.load(ctx.attribution_path(model_id, method, i, run_id=run_id))
                  for i in images if os.path.exists(ctx.attribution_path(model_id, method, i, run_id=run_id))}
        if loaded:
            maps[model_id] = loaded
    if not images or not maps:
        return None
    details = {(row["model_id"], row["index"]): row for row in ctx.per_sample.rows(run_id=run_id, method=method)}
    path = os.path.join(report_dir, f"qualitative_{method}.svg")
    qualitative_grid(images, boxes, maps, path, details=details)
    return path


def build_report(ctx: "RunContext", run_id: str) -> List[str]:
    """
    只从落盘的记录重新生成表格和图，运行没有记录时抛 NoData

    Returns:
        写出的文件路径
    """
    frame = records_frame(ctx.records.require(run_id))
    report_dir = ctx.path("reports", run_id)
    os.makedirs(report_dir, exist_ok=True)
    files: List[str] = []

    if _has(frame, "energy_pg", "ehr"):
        _write_table(alignment_table(frame), os.path.join(report_dir, "alignment.csv"), files)
    if _has(frame, "wsol_iou"):
        _write_table(wsol_table(frame), os.path.join(report_dir, "wsol.csv"), files)
    for mode in ("deletion", "insertion"):
        if _has(frame, f"inter_model_{mode}"):
            _write_table(faithfulness_table(frame, mode), os.path.join(report_dir, f"inter_model_{mode}.csv"), files)
    concepts = concept_table(frame)
    if not concepts.empty:
        _write_table(concepts, os.path.join(report_dir, "concepts.csv"), files)
        path = os.path.join(report_dir, "concepts.svg")
        concept_bars(concepts, path)
        files.append(path)

    curves = ctx.curves.rows(run_id=run_id)
    for method in sorted({row["method"] for row in curves}):
        path = os.path.join(report_dir, f"curves_{method}.svg")
        curves_figure(curves, path, method)
        files.append(path)

    model_ids = sorted(set(frame["model_id"]))
    for method in sorted(m for m in set(frame["method"].dropna())):
        path = _qualitative(ctx, run_id, method, model_ids, report_dir)
        if path:
            files.append(path)

    logger.info(f"[Report] 运行 {run_id} 写出 {len(files)} 个文件到 {report_dir}")
    return files
