import heapq
import itertools
from abc import ABC, abstractmethod
from typing import List, Tuple

from localizer.search.node import Node
from localizer.utils.mappings import SearchStrategy


class BaseNodeQueue(ABC):
    """
    File de nœuds évalués. Les clés sont des tuples comparés par heapq ;
    le numéro d'insertion départage les égalités (runs reproductibles).
    """

    def __init__(self):
        self._heap: List[Tuple] = []
        self._seq = itertools.count()

    @abstractmethod
    def key(self, node: Node, seq: int) -> Tuple:
        pass

    def push(self, node: Node) -> None:
        if node.score is None:
            raise ValueError("Seuls les nœuds évalués peuvent être empilés")
        seq = next(self._seq)
        heapq.heappush(self._heap, (self.key(node, seq), node))

    def pop(self) -> Node:
        return heapq.heappop(self._heap)[1]

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


class BestFirstQueue(BaseNodeQueue):
    """BFS : meilleur score d'abord, puis niveau le plus haut, puis ordre d'insertion."""

    def key(self, node: Node, seq: int) -> Tuple:
        return -node.score, -node.level, seq


class DepthFirstQueue(BaseNodeQueue):
    """DFS : niveau le plus fin d'abord ; à niveau égal, meilleur score d'abord."""

    def key(self, node: Node, seq: int) -> Tuple:
        return node.level, -node.score, seq


QUEUE_MAP = {
    SearchStrategy.BFS: BestFirstQueue,
    SearchStrategy.DFS: DepthFirstQueue,
}


def make_queue(strategy: SearchStrategy) -> BaseNodeQueue:
    return QUEUE_MAP[strategy]()
