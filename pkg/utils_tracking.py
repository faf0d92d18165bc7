"""
Job Tracking
============

Record per-job outcomes and timings of a generation or evaluation run.
The summary goes to the log and to run_report.json; it never enters a
manifest, whose bytes must not depend on timing.
"""

import json
import logging
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

logger = logging.getLogger(__name__)


# ============================================================================
# RUN TRACKER
# ============================================================================

@dataclass
class RunTracker:
    """
    Track job outcomes across a run.

    Safe to share between worker threads.
    """

    run_name: str = "run"
    jobs: List[Dict[str, Any]] = field(default_factory=list)
    start_time: datetime = field(default_factory=datetime.now)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(
        self,
        job_id: str,
        stage: str,
        elapsed_seconds: float,
        success: bool = True,
        error: Optional[str] = None
    ) -> None:
        """
        Record one job.

        Args:
            job_id: Job identifier (video id, seed, ...)
            stage: Pipeline stage ("white", "composited", "train", ...)
            elapsed_seconds: Wall time spent on the job
            success: Whether the job finished
            error: Error message for failed jobs
        """
        entry = {
            "job_id": job_id,
            "stage": stage,
            "elapsed_seconds": round(elapsed_seconds, 4),
            "success": success,
        }
        if error:
            entry["error"] = error
        with self._lock:
            self.jobs.append(entry)

    @contextmanager
    def track(self, job_id: str, stage: str) -> Iterator[None]:
        """Time a block and record it; exceptions are recorded and re-raised."""
        started = time.perf_counter()
        try:
            yield
        except Exception as e:
            self.record(job_id, stage, time.perf_counter() - started, False, f"{type(e).__name__}: {e}")
            raise
        self.record(job_id, stage, time.perf_counter() - started)

    def get_summary(self) -> Dict[str, Any]:
        """
        Get run summary.

        Returns:
            Dictionary with per-stage counts, failures and timings
        """
        with self._lock:
            jobs = list(self.jobs)

        stages: Dict[str, Dict[str, Any]] = {}
        for job in jobs:
            stats = stages.setdefault(
                job["stage"], {"total": 0, "succeeded": 0, "failed": 0, "seconds": 0.0}
            )
            stats["total"] += 1
            stats["succeeded" if job["success"] else "failed"] += 1
            stats["seconds"] += job["elapsed_seconds"]
        for stats in stages.values():
            stats["seconds"] = round(stats["seconds"], 3)
            stats["mean_seconds"] = round(stats["seconds"] / max(stats["total"], 1), 4)

        elapsed = (datetime.now() - self.start_time).total_seconds()
        failures = sorted(
            (job for job in jobs if not job["success"]), key=lambda job: job["job_id"]
        )
        return {
            "run": self.run_name,
            "jobs": {
                "total": len(jobs),
                "succeeded": sum(job["success"] for job in jobs),
                "failed": len(failures),
            },
            "stages": dict(sorted(stages.items())),
            "failures": [
                {"job_id": job["job_id"], "stage": job["stage"], "error": job.get("error")}
                for job in failures
            ],
            "wall_seconds": round(elapsed, 1),
        }

    def export_report(self, output_path: Union[str, Path]) -> Path:
        """
        Export the run report to JSON.

        Args:
            output_path: Path to save report
        """
        report = {
            "generated_at": datetime.now().isoformat(),
            "summary": self.get_summary(),
        }
        path = Path(output_path)
        path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        logger.info(f"Run report exported to {path}")
        return path

    def log_summary(self) -> None:
        summary = self.get_summary()
        jobs = summary["jobs"]
        logger.info(
            f"{summary['run']}: {jobs['succeeded']:,}/{jobs['total']:,} jobs succeeded "
            f"in {summary['wall_seconds']:.1f}s"
        )
        for stage, stats in summary["stages"].items():
            logger.info(
                f"  {stage}: {stats['succeeded']:,} ok, {stats['failed']:,} failed, "
                f"{stats['mean_seconds']:.3f}s/job"
            )
