import hashlib
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from modules.Modules.Alignment import BoxSet, ThresholdGrid, ehr_detail, energy_pg, gain_ratio, wsol_iou
from modules.Modules.Attribution import AttributionMap, attribute, iba_fit_statistics
from modules.Modules.Dissection import chance_detectors, collect_profiles, count_unique_concepts, find_detectors, \
    iou_table
from modules.Modules.Dissection.ConceptCorpus import ConceptCorpus, generate_concept_corpus
from modules.Modules.Dissection.Detectors import detector_rate, export_detectors
from modules.Modules.Faithfulness import FaithfulnessSettings, evaluate_faithfulness
from modules.Modules.Harness import EvalSample, ModelCheckpoint, ScoreOracle, build_model, load_datasets, \
    select_eval_samples, train
from modules.Modules.BaseModule import BaseModule
from modules.Modules.Report import build_report
from modules.utils.Errors import MissingArtifact, TrainingFailure
from modules.utils.RecordStore import ResultRecord
from modules.utils.TensorFile import read_tensor, write_tensor

# 由实验种子派生的随机流编号
SELECTION_STREAM, ATTRIBUTION_STREAM = 3, 4


@dataclass
class RegimeList:
    augmentations: List[str]


@dataclass
class CheckpointSet:
    checkpoints: Dict[str, ModelCheckpoint]


@dataclass
class EvalSet:
    checkpoints: Dict[str, ModelCheckpoint]
    samples: List[EvalSample]
    channel_mean: np.ndarray
    calibration: Optional[np.ndarray] = None


@dataclass
class AttributionSet:
    eval_set: EvalSet
    maps: Dict[Tuple[str, str], List[AttributionMap]] = field(default_factory=dict)


@dataclass
class RecordBatch:
    records: List[ResultRecord]


def arch_hash(checkpoint: ModelCheckpoint) -> str:
    return hashlib.sha256(checkpoint.arch.model_dump_json().encode("utf-8")).hexdigest()[:12]


def _mean_se(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    values = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if len(values) == 0:
        return None, None
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), se


class Train_Module(BaseModule):
    """按每个增强方案训练一个模型，初始参数和结构相同"""

    def Thread_Task(self, input_data: RegimeList, response_func: Callable, next_func: Callable) -> CheckpointSet:
        ctx = self.context
        config = ctx.config
        train_set, val_set = load_datasets(config)
        arch = {"depth": config.depth, "widths": config.widths, "num_classes": config.num_classes,
                "in_channels": int(train_set.images.shape[1])}
        checkpoints = {}
        for augmentation in input_data.augmentations:
            model_id = ctx.model_id(augmentation)
            model = build_model(arch, seed=config.seed)
            try:
                checkpoint = train(model, train_set, augmentation, config, config.seed, eval_set=val_set,
                                   log_path=ctx.path("logs", f"train_{model_id}.jsonl"),
                                   checkpoint_path=ctx.checkpoint_path(model_id))
            except TrainingFailure as e:
                self.logger.error(f"[Train] 方案 {augmentation} 训练失败，终止: {e}")
                raise
            checkpoints[model_id] = checkpoint
            response_func(ctx.record(model_id, "top1", checkpoint.metadata["top1"],
                                     augmentation=augmentation, arch_hash=arch_hash(checkpoint),
                                     final_loss=checkpoint.metadata["final_loss"]))
        next_func(CheckpointSet(checkpoints))
        return CheckpointSet(checkpoints)


class Checkpoint_Module(BaseModule):
    """从输出目录读取已训练的检查点"""

    def Thread_Task(self, input_data: RegimeList, response_func: Callable, next_func: Callable) -> CheckpointSet:
        ctx = self.context
        checkpoints = {}
        for augmentation in input_data.augmentations:
            model_id = ctx.model_id(augmentation)
            checkpoint = ModelCheckpoint.load(ctx.checkpoint_path(model_id))
            if checkpoint.augmentation != augmentation:
                raise MissingArtifact(f"{ctx.checkpoint_path(model_id)} 是 {checkpoint.augmentation} 的检查点")
            checkpoints[model_id] = checkpoint
        self.logger.info(f"[Load] 读取 {len(checkpoints)} 个检查点")
        return CheckpointSet(checkpoints)


class Selection_Module(BaseModule):
    """筛选评估样本并落盘"""

    def Thread_Task(self, input_data: CheckpointSet, response_func: Callable, next_func: Callable) -> EvalSet:
        ctx = self.context
        config = ctx.config
        train_set, val_set = load_datasets(config)
        oracles = {model_id: ScoreOracle.from_checkpoint(ck, batch_size=config.score_batch, image_size=config.image_size)
                   for model_id, ck in input_data.checkpoints.items()}
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, SELECTION_STREAM]))
        samples = select_eval_samples(oracles, val_set, config.eval_samples, rng,
                                      score_threshold=config.score_threshold,
                                      area_range=(config.box_area_min, config.box_area_max))
        for sample in samples:
            write_tensor(ctx.sample_path(sample.index), sample.image, {"index": sample.index, "label": sample.label})
            ctx.samples.add_chunk(dict(run_id=ctx.run_id, **sample.to_row()))
        return EvalSet(checkpoints=input_data.checkpoints, samples=samples, channel_mean=train_set.channel_mean(),
                       calibration=train_set.images[:config.calibration_size])


class Attribute_Module(BaseModule):
    """对每个 (模型, 方法, 样本) 计算归因图并落盘"""

    def _attribute_model(self, model_id: str, eval_set: EvalSet) -> Dict[Tuple[str, str], List[AttributionMap]]:
        ctx = self.context
        config = ctx.config
        # 钩子挂在模型实例上，每个线程只处理自己的模型
        model = eval_set.checkpoints[model_id].model()
        stats = None
        if "iba" in ctx.methods:
            stats = iba_fit_statistics(model, config.iba_layer, eval_set.calibration, min_images=config.calibration_size)
        result = {}
        for method in ctx.methods:
            maps = []
            for sample in eval_set.samples:
                rng = np.random.default_rng(np.random.SeedSequence([config.seed, ATTRIBUTION_STREAM, sample.index]))
                attribution = attribute(method, model, sample.image, sample.label, config, stats=stats, rng=rng)
                attribution.save(ctx.attribution_path(model_id, method, sample.index))
                maps.append(attribution)
            self.logger.info(f"[Attribute] {model_id} {method}: {len(maps)} 张归因图")
            result[(model_id, method)] = maps
        return result

    def Thread_Task(self, input_data: EvalSet, response_func: Callable, next_func: Callable) -> AttributionSet:
        # 样本按全部模型筛选，只对筛选后的模型计算归因
        chosen = [self.context.model_id(a) for a in self.context.augmentations]
        maps = {}
        for part in self.pipeline.fan_out(lambda model_id: self._attribute_model(model_id, input_data),
                                          [m for m in input_data.checkpoints if m in chosen]):
            maps.update(part)
        return AttributionSet(eval_set=input_data, maps=maps)


class AttributionLoad_Module(BaseModule):
    """读取本次运行已落盘的样本和归因图"""

    def Thread_Task(self, input_data: RegimeList, response_func: Callable, next_func: Callable) -> AttributionSet:
        ctx = self.context
        config = ctx.config
        rows = {row["index"]: row for row in ctx.samples.rows(run_id=ctx.run_id)}
        if not rows:
            raise MissingArtifact(f"运行 {ctx.run_id} 没有评估样本，请先运行 attribute")
        checkpoints = {}
        for augmentation in input_data.augmentations:
            model_id = ctx.model_id(augmentation)
            checkpoints[model_id] = ModelCheckpoint.load(ctx.checkpoint_path(model_id))
        samples = []
        for index in sorted(rows):
            row = rows[index]
            image, _ = read_tensor(ctx.sample_path(index))
            samples.append(EvalSample(index=index, image=image, label=row["label"],
                                      boxes=BoxSet.of(row["boxes"], image.shape[-1], image.shape[-2]),
                                      scores=row["scores"]))
        maps = {}
        for model_id in checkpoints:
            for method in ctx.methods:
                maps[(model_id, method)] = [AttributionMap.load(ctx.attribution_path(model_id, method, s.index))
                                            for s in samples]
        train_set, _ = load_datasets(config)
        eval_set = EvalSet(checkpoints=checkpoints, samples=samples, channel_mean=train_set.channel_mean())
        self.logger.info(f"[Load] {len(samples)} 个样本，{len(maps)} 组归因图")
        return AttributionSet(eval_set=eval_set, maps=maps)


class Alignment_Module(BaseModule):
    """EnergyPG / EHR / WSOL IoU，逐样本写明细，逐 (模型, 方法) 写均值和标准误"""

    def _evaluate(self, key: Tuple[str, str], data: AttributionSet) -> List[ResultRecord]:
        ctx = self.context
        config = ctx.config
        model_id, method = key
        grid = ThresholdGrid.linspace(config.ehr_thresholds)
        baseline = data.maps.get((ctx.model_id("baseline"), method))
        values = {"energy_pg": [], "ehr": [], "ehr_raw_auc": [], "wsol_iou": []}
        for i, (sample, attribution) in enumerate(zip(data.eval_set.samples, data.maps[key])):
            pg = energy_pg(attribution, sample.boxes)
            detail = ehr_detail(attribution, sample.boxes, grid, numerator=config.ehr_numerator)
            iou, estimated = wsol_iou(attribution, sample.boxes, threshold=config.wsol_threshold)
            gain = gain_ratio(attribution, baseline[i], sample.boxes) if baseline is not None and model_id != ctx.model_id("baseline") else None
            for name, value in (("energy_pg", pg), ("ehr", detail.score), ("ehr_raw_auc", detail.raw_auc), ("wsol_iou", iou)):
                values[name].append(value)
            ctx.per_sample.add_chunk({"run_id": ctx.run_id, "model_id": model_id, "method": method, "index": sample.index,
                                      "energy_pg": pg, "ehr": detail.score, "ehr_raw_auc": detail.raw_auc,
                                      "wsol_iou": iou, "wsol_box": list(estimated) if estimated else None,
                                      "gain_ratio": gain})
        n = len(data.eval_set.samples)
        pg_mean, pg_se = _mean_se(values["energy_pg"])
        ehr_mean, ehr_se = _mean_se(values["ehr"])
        raw_mean, raw_se = _mean_se(values["ehr_raw_auc"])
        iou_mean, iou_se = _mean_se(values["wsol_iou"])
        return [
            ctx.record(model_id, "energy_pg", pg_mean, method=method, se=pg_se, n=n),
            ctx.record(model_id, "ehr", ehr_mean, method=method, se=ehr_se, n=n, raw_auc=raw_mean,
                       raw_auc_se=raw_se, numerator=config.ehr_numerator, thresholds=config.ehr_thresholds),
            ctx.record(model_id, "wsol_iou", iou_mean, method=method, se=iou_se, n=n, threshold=config.wsol_threshold),
        ]

    def Thread_Task(self, input_data: AttributionSet, response_func: Callable, next_func: Callable) -> RecordBatch:
        records = []
        for part in self.pipeline.fan_out(lambda key: self._evaluate(key, input_data), sorted(input_data.maps)):
            response_func(part)
            records.extend(part)
        return RecordBatch(records)


class Faithfulness_Module(BaseModule):
    """跨模型删除/插入分数，曲线写入 curves.jsonl"""

    def Thread_Task(self, input_data: AttributionSet, response_func: Callable, next_func: Callable) -> RecordBatch:
        ctx = self.context
        config = ctx.config
        eval_set = input_data.eval_set
        settings = FaithfulnessSettings.from_config(config, eval_set.channel_mean)
        images = [s.image for s in eval_set.samples]
        records = []
        for (model_id, method), maps in sorted(input_data.maps.items()):
            oracle = ScoreOracle.from_checkpoint(eval_set.checkpoints[model_id], batch_size=config.score_batch,
                                                 image_size=config.image_size)
            result = evaluate_faithfulness(oracle, images, maps, settings, model_id, method,
                                           config_hash=ctx.hash, seed=config.seed, map_func=self.pipeline.fan_out)
            for mode, score in (("deletion", result.deletion), ("insertion", result.insertion)):
                for curve_name, curve in (("main", score.main), ("rao", score.rao), ("difference", score.difference)):
                    ctx.curves.add_chunk({"run_id": ctx.run_id, "model_id": model_id, "method": method, "mode": mode,
                                          "curve": curve_name, "x": curve.x.tolist(), "mean": curve.y.tolist(),
                                          "se": curve.se.tolist()})
                record = ctx.record(model_id, f"inter_model_{mode}", score.auc, method=method, se=score.se,
                                    n=result.n_images, **score.summary())
                response_func(record)
                records.append(record)
        return RecordBatch(records)


class Dissection_Module(BaseModule):
    """最后卷积层的网络解剖，可选随机权重网络的零基线"""

    def _corpus(self) -> ConceptCorpus:
        config = self.context.config
        directory = self.context.path("corpus", f"s{config.seed}-{config.image_size}px-{config.corpus_size}")
        if os.path.exists(os.path.join(directory, "concepts.yaml")):
            return ConceptCorpus.load(directory)
        corpus = generate_concept_corpus(config.image_size, config.corpus_size, config.seed)
        corpus.save(directory)
        return corpus

    def _dissect(self, model, model_id: str, corpus: ConceptCorpus):
        config = self.context.config
        profiles = collect_profiles(model, None, corpus, resolution=config.quantile_resolution)
        table = iou_table(model, None, profiles, corpus)
        detectors = find_detectors(model, None, corpus, iou_threshold=config.iou_threshold,
                                   mode=config.detector_mode, table=table)
        chance = chance_detectors(table, corpus, iou_threshold=config.iou_threshold, mode=config.detector_mode)
        live = [p.unit for p in profiles if not p.degenerate]
        coverage = float(np.mean(table.coverage[live])) if live else 0.0
        return detectors, len(profiles), coverage, detector_rate(chance, len(profiles))

    def Thread_Task(self, input_data: CheckpointSet, response_func: Callable, next_func: Callable) -> RecordBatch:
        ctx = self.context
        config = ctx.config
        corpus = self._corpus()
        report_dir = ctx.path("reports", ctx.run_id)
        os.makedirs(report_dir, exist_ok=True)
        records = []
        for model_id, checkpoint in input_data.checkpoints.items():
            detectors, n_units, coverage, chance_rate = self._dissect(checkpoint.model(), model_id, corpus)
            export_detectors(detectors, os.path.join(report_dir, f"detectors_{model_id}.csv"))
            for category, count in count_unique_concepts(detectors).items():
                records.append(ctx.record(model_id, f"unique_concepts_{category}", float(count),
                                          threshold=config.iou_threshold, mode=config.detector_mode))
            records.append(ctx.record(model_id, "detector_units", float(len({d.unit for d in detectors})),
                                      rate=detector_rate(detectors, n_units), units=n_units, coverage=coverage,
                                      chance_rate=chance_rate))
        if ctx.null_baseline and input_data.checkpoints:
            checkpoint = next(iter(input_data.checkpoints.values()))
            random_model = build_model(checkpoint.arch, seed=config.seed).eval()
            detectors, n_units, coverage, chance_rate = self._dissect(random_model, "random", corpus)
            rate = detector_rate(detectors, n_units)
            self.logger.info(f"[Dissect] 随机权重网络的检测器比例 {rate:.3f}，机会水平 {chance_rate:.3f}")
            null_id = f"random-s{config.seed}"
            records.append(ctx.record(null_id, "null_detector_rate", rate, units=n_units,
                                      detectors=len(detectors), coverage=coverage,
                                      concepts=count_unique_concepts(detectors)))
            records.append(ctx.record(null_id, "chance_detector_rate", chance_rate, units=n_units,
                                      threshold=config.iou_threshold))
        response_func(records)
        return RecordBatch(records)


@dataclass
class RunRequest:
    run_id: Optional[str] = None


@dataclass
class ReportFiles:
    run_id: str
    paths: List[str]


class Report_Module(BaseModule):
    """从记录重新生成表格和图"""

    def Thread_Task(self, input_data: RunRequest, response_func: Callable, next_func: Callable) -> ReportFiles:
        run_id = input_data.run_id or self.context.run_id
        return ReportFiles(run_id=run_id, paths=build_report(self.context, run_id))
