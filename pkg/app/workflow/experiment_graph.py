# app/workflow/experiment_graph.py

from langgraph.constants import END, START

from app.pipeline.artifact_writer import ArtifactWriter
from app.pipeline.experiment_executor import ExperimentExecutor
from app.pipeline.experiment_state import ExperimentState
from app.pipeline.invariant_checker import InvariantChecker
from app.workflow.builder.base import GraphBuilder


def _route(next_node: str):
    def route(state: ExperimentState) -> str:
        return END if state.get("error") else next_node
    return route


class ExperimentGraph(GraphBuilder):
    """Builder for the validate -> run -> check -> write workflow shared by every subcommand"""

    state_type = ExperimentState

    def __init__(self):
        super().__init__()
        self.executor = ExperimentExecutor()
        self.checker = InvariantChecker()
        self.writer = ArtifactWriter()

    def add_nodes(self) -> None:
        self.graph.add_node("validate_config", self.executor.validate_config)
        self.graph.add_node("execute_experiment", self.executor.execute_experiment)
        self.graph.add_node("verify_invariants", self.checker.verify_invariants)
        # Artifacts are written even when an invariant failed
        self.graph.add_node("emit_artifacts", self.writer.emit_artifacts)

    def add_edges(self) -> None:
        self.graph.add_edge(START, "validate_config")
        self.graph.add_edge("verify_invariants", "emit_artifacts")
        self.graph.add_edge("emit_artifacts", END)

    def conditional_edges(self) -> None:
        """A node that sets `error` ends the run"""
        self.graph.add_conditional_edges("validate_config", _route("execute_experiment"),
                                         ["execute_experiment", END])
        self.graph.add_conditional_edges("execute_experiment", _route("verify_invariants"),
                                         ["verify_invariants", END])
