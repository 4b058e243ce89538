import argparse
import sys
from pathlib import Path
from typing import List, Optional

# 获取项目根目录路径
project_root = Path(__file__).resolve().parent
sys.path.append(str(project_root))

from modules.Modules.Report import check_directions, records_frame, write_reproduction
from modules.Modules.Stages import (AttributionLoad_Module, AttributionSet, Alignment_Module, Attribute_Module,
                                    Checkpoint_Module, Dissection_Module, Faithfulness_Module, RegimeList,
                                    Report_Module, ReportFiles, RunRequest, Selection_Module, Train_Module)
from modules.PipeLine.BasePipeLine import PipeLine, RunContext
from modules.utils.ConfigLoader import load_config
from modules.utils.Errors import InvalidArgument, MixInterpError
from modules.utils.logger import get_logger, setup_root_logger

CRITERIA = ("alignment", "faithfulness", "dissection")

logger = get_logger("Experiment")


def _csv(value: Optional[str]) -> Optional[List[str]]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="Experiment", description="混合样本增强与可解释性实验")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="扁平 YAML 配置文件")
    common.add_argument("--seed", type=int, default=None, help="覆盖配置中的 seed")
    common.add_argument("--out", type=str, default=None, help="输出目录，覆盖 output_dir")
    common.add_argument("--method", type=str, choices=["gradcam", "iba"], default=None, help="只用一种归因方法")
    common.add_argument("--models", type=str, default=None, help="逗号分隔的增强方案，如 baseline,cutout")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="训练每个增强方案的模型")
    sub.add_parser("attribute", parents=[common], help="筛选样本并计算归因图")
    sub.add_parser("eval-align", parents=[common], help="EnergyPG / EHR / WSOL")
    sub.add_parser("eval-faith", parents=[common], help="跨模型删除/插入")
    dissect = sub.add_parser("dissect", parents=[common], help="网络解剖")
    dissect.add_argument("--null", action="store_true", help="同时测随机权重网络的检测器比例")
    evaluate = sub.add_parser("evaluate", parents=[common], help="按准则运行评估")
    evaluate.add_argument("--criteria", type=str, default=",".join(CRITERIA), help="alignment,faithfulness,dissection")
    report = sub.add_parser("report", parents=[common], help="从记录生成表格和图")
    report.add_argument("--run", type=str, default=None, help="运行标识，默认为当前配置的运行")
    reproduce = sub.add_parser("reproduce", parents=[common], help="多种子的方向性复现")
    reproduce.add_argument("--seeds", type=str, default="0,1,2", help="逗号分隔的种子")
    return parser


def make_context(args: argparse.Namespace, null_baseline: bool = False) -> RunContext:
    """--method / --models 只作为筛选，产物仍按完整配置的 run_id 存放"""
    config = load_config(args.config, seed=args.seed, output_dir=args.out)
    return RunContext(config, null_baseline=null_baseline, methods=[args.method] if args.method else None,
                      augmentations=_csv(args.models))


def regimes(ctx: RunContext) -> RegimeList:
    return RegimeList(list(ctx.augmentations))


def run(ctx: RunContext, *modules, input_data=None):
    pipeline = PipeLine.create_pipeline(*modules, context=ctx)
    return pipeline.GetService(regimes(ctx) if input_data is None else input_data)


def cmd_train(ctx: RunContext):
    return run(ctx, Train_Module)


def cmd_attribute(ctx: RunContext) -> AttributionSet:
    # 样本筛选要求所有模型都答对，所以总是读取配置里的全部检查点
    return run(ctx, Checkpoint_Module, Selection_Module, Attribute_Module,
               input_data=RegimeList(list(ctx.config.augmentations)))


def cmd_evaluate(ctx: RunContext, criteria: List[str]) -> int:
    """返回写入的记录数"""
    unknown = set(criteria) - set(CRITERIA)
    if unknown:
        raise InvalidArgument(f"未知的评估准则 {sorted(unknown)}")
    written = 0
    if {"alignment", "faithfulness"} & set(criteria):
        attributions = cmd_attribute(ctx)
        for criterion, module in (("alignment", Alignment_Module), ("faithfulness", Faithfulness_Module)):
            if criterion in criteria:
                written += len(run(ctx, module, input_data=attributions).records)
    if "dissection" in criteria:
        written += len(run(ctx, Checkpoint_Module, Dissection_Module).records)
    logger.info(f"[Evaluate] 运行 {ctx.run_id} 写入 {written} 条记录")
    return written


def cmd_report(ctx: RunContext, run_id: Optional[str] = None) -> ReportFiles:
    """只读记录，不会重新训练或评估"""
    return run(ctx, Report_Module, input_data=RunRequest(run_id))


def cmd_reproduce(ctx: RunContext, seeds: List[int]) -> dict:
    """逐种子训练并评估对齐和忠实度，方向检查只报告不失败"""
    frames, run_ids = {}, {}
    for seed in seeds:
        seeded = ctx.with_seed(seed)
        run_ids[seed] = seeded.run_id
        try:
            cmd_train(seeded)
            cmd_evaluate(seeded, ["alignment", "faithfulness"])
            frames[seed] = records_frame(seeded.records.require(seeded.run_id))
        except MixInterpError as e:
            logger.error(f"[Reproduce] 种子 {seed} 失败，跳过: {e}")
    results = check_directions(frames, n_seeds=len(seeds))
    return write_reproduction(results, ctx.path("reports", "reproduction"), run_ids)


def main(argv: Optional[List[str]] = None) -> int:
    setup_root_logger()
    args = build_parser().parse_args(argv)
    try:
        ctx = make_context(args, null_baseline=getattr(args, "null", False))
        if args.command == "train":
            cmd_train(ctx)
        elif args.command == "attribute":
            cmd_attribute(ctx)
        elif args.command == "eval-align":
            run(ctx, AttributionLoad_Module, Alignment_Module)
        elif args.command == "eval-faith":
            run(ctx, AttributionLoad_Module, Faithfulness_Module)
        elif args.command == "dissect":
            run(ctx, Checkpoint_Module, Dissection_Module)
        elif args.command == "evaluate":
            cmd_evaluate(ctx, _csv(args.criteria) or list(CRITERIA))
        elif args.command == "report":
            cmd_report(ctx, args.run)
        elif args.command == "reproduce":
            cmd_reproduce(ctx, [int(s) for s in _csv(args.seeds)])
    except MixInterpError as e:
        logger.error(f"[{args.command}] {type(e).__name__}: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
