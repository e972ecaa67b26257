"""File formats, synthetic data, attention export, cost accounting and the CLI."""

from .attention import dump_attention, read_attention_csv, rows_to_csv
from .cost import (CostReport, ParamCount, battery_days, cost_report, count_macs, count_params,
                   streaming_latency_ms)
from .formats import load_checkpoint, read_bsr, read_checkpoint, save_checkpoint, write_bsr
from .synth import generate_multimodal, generate_synthetic, make_pretrain_set, make_task

__all__ = [
    "CostReport", "ParamCount", "battery_days", "cost_report", "count_macs", "count_params",
    "dump_attention", "generate_multimodal", "generate_synthetic", "load_checkpoint",
    "make_pretrain_set", "make_task", "read_attention_csv", "read_bsr", "read_checkpoint",
    "rows_to_csv", "save_checkpoint", "streaming_latency_ms", "write_bsr",
]
