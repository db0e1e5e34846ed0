"""Trace CSV schema: writing, lossless reading, and summaries.

The wall_time_ns column is left empty in trace files so identical seeds
produce byte-identical traces; measured times are reported in the summary
file instead.
"""

import csv
from dataclasses import dataclass
from typing import Optional

from .solver import IterationRecord, RunResult

TRACE_HEADER = (
    "t,eta,alpha,beta,grad_mapping_norm,step_norm_x,dist_y_star,metric_m,"
    "surrogate_error,objective,lyapunov,keys_drawn,oracle_evals,wall_time_ns"
)

SUMMARY_HEADER = (
    "seed,status,steps,uniform_output_t,final_objective,final_metric_m,"
    "mean_metric_m,final_grad_mapping_norm,final_step_norm_x,"
    "final_surrogate_error,final_dist_y_star,realized_b_min,realized_b_max,"
    "keys_drawn,oracle_evals,wall_time_ns"
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def record_row(rec: IterationRecord) -> str:
    fields = (
        rec.t, rec.eta, rec.alpha, rec.beta, rec.grad_mapping_norm,
        rec.step_norm_x, rec.dist_y_star, rec.metric_m, rec.surrogate_error,
        rec.objective, rec.lyapunov, rec.keys_drawn, rec.oracle_evals,
        None,  # wall time withheld for reproducibility
    )
    return ",".join(_fmt(f) for f in fields)


def write_trace(path: str, records: list[IterationRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in records:
            fh.write(record_row(rec) + "\n")


def read_trace(path: str) -> list[IterationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER.split(","):
            raise ValueError(f"{path}: unexpected trace header")
        for row in reader:
            def fl(name: str) -> Optional[float]:
                return float(row[name]) if row[name] != "" else None

            records.append(IterationRecord(
                t=int(row["t"]),
                eta=fl("eta"),
                alpha=fl("alpha"),
                beta=fl("beta"),
                grad_mapping_norm=fl("grad_mapping_norm"),
                step_norm_x=fl("step_norm_x"),
                dist_y_star=fl("dist_y_star"),
                metric_m=fl("metric_m"),
                surrogate_error=fl("surrogate_error"),
                objective=fl("objective"),
                lyapunov=fl("lyapunov"),
                keys_drawn=int(row["keys_drawn"]),
                oracle_evals=int(row["oracle_evals"]),
                wall_time_ns=int(row["wall_time_ns"]) if row["wall_time_ns"] else None,
            ))
    return records


@dataclass(frozen=True)
class SeedSummary:
    seed: int
    status: str
    result: Optional[RunResult]
    wall_time_ns: int

    def row(self) -> str:
        if self.result is None:
            fields = [self.seed, self.status, 0] + [None] * 12 + [self.wall_time_ns]
            return ",".join(v if isinstance(v, str) else _fmt(v) for v in fields)
        recs = self.result.records
        last = recs[-1]
        metrics = [r.metric_m for r in recs if r.metric_m is not None]
        mean_metric = sum(metrics) / len(metrics) if metrics else None
        fields = [
            self.seed, self.status, len(recs) - 1, self.result.uniform_index,
            last.objective, last.metric_m, mean_metric, last.grad_mapping_norm,
            last.step_norm_x, last.surrogate_error, last.dist_y_star,
            self.result.realized_b_min, self.result.realized_b_max,
            last.keys_drawn, last.oracle_evals, self.wall_time_ns,
        ]
        return ",".join(v if isinstance(v, str) else _fmt(v) for v in fields)


def write_summary(path: str, summaries: list[SeedSummary]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for s in sorted(summaries, key=lambda s: s.seed):
            fh.write(s.row() + "\n")
