from .Boxes import BoxSet, ThresholdGrid
from .Metrics import energy_pg, ehr, ehr_detail, wsol_iou, gain_ratio
