# app/workflow/director.py

import structlog
from langgraph.graph.state import CompiledStateGraph

from app.workflow.experiment_graph import ExperimentGraph

logger = structlog.get_logger(__name__)


class GraphDirector:
    """
    Entry point to the compiled workflows
    """

    @staticmethod
    def experiment() -> CompiledStateGraph:
        """
        Build and return the experiment workflow graph

        Returns:
            Compiled experiment workflow
        """
        logger.debug("building_experiment_workflow")
        return ExperimentGraph().compile()
