from .Tables import alignment_table, concept_table, faithfulness_table, records_frame, wsol_table
from .Figures import concept_bars, curves_figure, qualitative_grid
from .Reporter import build_report
from .Reproduction import check_directions, write_reproduction
