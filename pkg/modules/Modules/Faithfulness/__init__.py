from .Grid import GridRanking, ReplacementPolicy, rank_grids
from .Curves import ScoreCurve, deletion_curve, insertion_curve, rao_mean_curve
from .InterModel import FaithfulnessResult, FaithfulnessSettings, InterModelScore, evaluate_faithfulness, inter_model_score
