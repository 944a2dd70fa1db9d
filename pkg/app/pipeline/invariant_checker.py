# app/pipeline/invariant_checker.py

from typing import Any, Dict

import structlog

from app.pipeline.experiment_state import ExperimentState

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVARIANT = 2


class InvariantChecker:
    """Turns the checks an experiment reports into the run's exit code"""

    def verify_invariants(self, state: ExperimentState) -> Dict[str, Any]:
        checks = state["result"].checks
        failed = [c for c in checks if not c.passed]
        for check in checks:
            if check.passed:
                logger.debug("invariant_passed", name=check.name, detail=check.detail)
            else:
                logger.warning("invariant_failed", name=check.name, detail=check.detail)
        return {"checks": checks, "exit_code": EXIT_INVARIANT if failed else EXIT_OK}
