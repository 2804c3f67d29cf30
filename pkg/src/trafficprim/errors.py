"""Exception hierarchy shared by all stages."""


class TrafficPrimError(Exception):
    """Base class for every error raised by the package."""


class ScenarioError(TrafficPrimError, ValueError):
    pass


class SegmentationError(TrafficPrimError, ValueError):
    pass


class TransformError(TrafficPrimError, ValueError):
    pass


class PlanningError(TrafficPrimError):
    """No collision-free connection was found, or the query itself is invalid."""

    def __init__(self, message: str, nodes_start: int = 0, nodes_goal: int = 0):
        super().__init__(message)
        self.nodes_start = nodes_start
        self.nodes_goal = nodes_goal


class GpError(TrafficPrimError, ValueError):
    pass


class PipelineError(TrafficPrimError):
    pass


class EvaluationError(TrafficPrimError, ValueError):
    pass
