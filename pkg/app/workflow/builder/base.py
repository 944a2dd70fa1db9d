# app/workflow/builder/base.py

from abc import ABC, abstractmethod
from typing import Optional, Type

import structlog
from langgraph.graph import StateGraph
from langgraph.graph.state import CompiledStateGraph

logger = structlog.get_logger(__name__)


class GraphBuilder(ABC):
    """
    Template for workflow builders: subclasses name their state type and
    contribute nodes and edges
    """

    state_type: Type = dict

    def __init__(self):
        self.graph: Optional[StateGraph] = None

    def init_graph(self) -> None:
        self.graph = StateGraph(self.state_type)

    @abstractmethod
    def add_nodes(self) -> None:
        pass

    @abstractmethod
    def add_edges(self) -> None:
        pass

    def conditional_edges(self) -> None:
        """Routing that depends on the state (optional)"""
        pass

    def build(self) -> "GraphBuilder":
        self.init_graph()
        self.add_nodes()
        self.add_edges()
        self.conditional_edges()
        logger.debug("graph_built", builder=type(self).__name__, state=self.state_type.__name__)
        return self

    def get_graph(self) -> StateGraph:
        """
        Get the built graph

        Raises:
            ValueError: If build() has not run
        """
        if self.graph is None:
            raise ValueError("Graph has not been built yet. Call build() first.")
        return self.graph

    def compile(self) -> CompiledStateGraph:
        if self.graph is None:
            self.build()
        return self.graph.compile()
