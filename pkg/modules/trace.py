"""
Iteration Traces
================

Per-step records of a solver run and the writers that persist them.

Features:
- Structured per-iteration rows (k, Phi, certificate value, step, block, timing)
- Best-index selection with smallest-k tie breaking
- Stable CSV schema with a version line, JSON run summaries
- Append-only JSON-lines run log for replication studies
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import jsonlines
import numpy as np
import pandas as pd

from modules.stationarity import StationarityCertificate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACE_COLUMNS = [
    "k",
    "phi",
    "cert",
    "alpha",
    "block",
    "wall_ns",
    "improvement",
    "exact_cert",
    "rng_digest",
]


@dataclass
class TraceRow:
    """One iteration of a solver run"""

    k: int
    phi: float
    cert: float
    alpha: Optional[float] = None
    block: int = -1
    wall_ns: int = 0
    improvement: Optional[float] = None
    exact_cert: Optional[float] = None
    rng_digest: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization"""
        return asdict(self)


@dataclass
class IterationTrace:
    """
    Full record of one solver run

    ``best_index`` is the position in ``rows`` of the smallest certificate value
    (first occurrence). ``certificate`` is evaluated at that row.
    """

    algorithm: str
    planned_n: int
    rows: List[TraceRow] = field(default_factory=list)
    certificate: Optional[StationarityCertificate] = None
    best_index: int = 0
    x_final: Optional[np.ndarray] = None
    x_best: Optional[np.ndarray] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    @property
    def n_iterations(self) -> int:
        return len(self.rows)

    @property
    def phi_values(self) -> np.ndarray:
        return np.array([r.phi for r in self.rows])

    @property
    def cert_values(self) -> np.ndarray:
        return np.array([r.cert for r in self.rows])

    def select_best(self) -> int:
        """Index of the first row attaining the minimum certificate value."""
        if not self.rows:
            raise ValueError("Trace has no rows")
        self.best_index = int(np.argmin(self.cert_values))
        return self.best_index

    @property
    def best_row(self) -> TraceRow:
        return self.rows[self.best_index]

    @property
    def passed(self) -> bool:
        return bool(self.certificate is not None and self.certificate.passed)

    def descent_violations(self, tol: float = 1e-8) -> List[int]:
        """k of every step with Phi(x^{k+1}) > Phi(x^k) - improvement_k + tol."""
        bad = []
        for cur, nxt in zip(self.rows, self.rows[1:]):
            gain = cur.cert if cur.improvement is None else cur.improvement
            if nxt.phi > cur.phi - gain + tol:
                bad.append(cur.k)
        return bad

    def monotone(self, tol: float = 1e-8) -> bool:
        return bool(np.all(np.diff(self.phi_values) <= tol))

    def first_hit(self) -> Optional[int]:
        """k of the first row whose value clears the certificate threshold, if any."""
        if self.certificate is None:
            return None
        limit = self.certificate.threshold + self.certificate.slack
        for row in self.rows:
            if row.cert <= limit:
                return row.k
        return None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=TRACE_COLUMNS)

    def summary(self) -> Dict[str, Any]:
        """JSON-ready summary: certificate, k~, N and config echo"""
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "planned_n": self.planned_n,
            "iterations": self.n_iterations,
            "best_index": self.best_index,
            "best_k": self.best_row.k if self.rows else None,
            "phi_final": self.rows[-1].phi if self.rows else None,
            "passed": self.passed,
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "x_best": None if self.x_best is None else self.x_best.tolist(),
            "config": self.config,
        }


class Stopwatch:
    """Nanosecond clock that reads zero when timing is disabled"""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.start = time.perf_counter_ns() if enabled else 0

    def elapsed(self) -> int:
        return time.perf_counter_ns() - self.start if self.enabled else 0


class TraceWriter:
    """Writes traces and experiment tables to an output directory"""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.run_log_file = self.output_dir / "runs.jsonl"

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        """CSV with a leading schema line; float formatting is fixed for byte stability."""
        path = self.output_dir / name
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# schema_version={SCHEMA_VERSION}\n")
            frame.to_csv(f, index=False, float_format="%.17g")
        return path

    def write_trace(self, trace: IterationTrace, stem: str) -> Dict[str, Path]:
        csv_path = self.write_frame(trace.to_frame(), f"{stem}.csv")
        json_path = self.output_dir / f"{stem}_summary.json"
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(trace.summary(), f, indent=2, sort_keys=True)
        logger.debug(f"Trace written to {csv_path}")
        return {"csv": csv_path, "summary": json_path}

    def log_run(self, record: Dict[str, Any]) -> None:
        """Append one record to runs.jsonl"""
        try:
            with jsonlines.open(self.run_log_file, mode="a") as writer:
                writer.write(record)
        except Exception as e:
            logger.error(f"Failed to log run: {str(e)}")


def read_trace_csv(path: str) -> pd.DataFrame:
    """Load a trace or table CSV, skipping the schema line."""
    return pd.read_csv(path, comment="#")
