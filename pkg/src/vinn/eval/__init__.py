from .aggregate import LateralityResult, restore_laterality, view_aggregate
from .metrics import EvalRecord, asd, boundary, dsc, evaluate_segmentation
from .stats import StatRow, benjamini_hochberg, paired_stats, wilcoxon

__all__ = ["EvalRecord", "LateralityResult", "StatRow", "asd", "benjamini_hochberg", "boundary", "dsc",
           "evaluate_segmentation", "paired_stats", "restore_laterality", "view_aggregate", "wilcoxon"]
