# app/pipeline/experiment_executor.py

from typing import Any, Dict

import structlog
from pydantic import ValidationError

from app.errors import LabError
from app.pipeline.experiment_state import ExperimentState
from app.pipeline.experiments import get_experiment

logger = structlog.get_logger(__name__)


def _describe(error: Exception) -> str:
    if isinstance(error, ValidationError):
        return "; ".join(f"{'.'.join(map(str, e['loc'])) or 'params'}: {e['msg']}" for e in error.errors())
    return str(error)


class ExperimentExecutor:
    """
    Validates the subcommand parameters and runs the experiment.
    Failures are returned as state updates so the graph can route to the end.
    """

    def validate_config(self, state: ExperimentState) -> Dict[str, Any]:
        """
        Validate the subcommand's parameters against its model

        Args:
            state: Current workflow state with the resolved config

        Returns:
            Updated state with the validated params, or an error
        """
        config = state["config"]
        try:
            params_model, _ = get_experiment(config.subcommand)
            params = params_model.model_validate(config.params)
        except (ValidationError, LabError) as e:
            logger.error(f"Failed to validate {config.subcommand.value} parameters: {_describe(e)}")
            return {"error": _describe(e), "exit_code": 1}
        logger.info("config_validated", subcommand=config.subcommand.value, seed=config.seed,
                    replicas=config.replicas, threads=config.threads)
        return {"params": params}

    def execute_experiment(self, state: ExperimentState) -> Dict[str, Any]:
        config = state["config"]
        _, runner = get_experiment(config.subcommand)
        try:
            result = runner(config, state["params"])
        except (LabError, ValidationError, ValueError, ArithmeticError, MemoryError) as e:
            logger.error(f"Failed to run {config.subcommand.value}: {_describe(e)}")
            return {"error": _describe(e), "exit_code": 1}
        logger.info("experiment_finished", subcommand=config.subcommand.value, tables=len(result.tables),
                    documents=len(result.documents), checks=len(result.checks))
        return {"result": result}
