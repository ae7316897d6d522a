import io
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib
from matplotlib.figure import Figure
from matplotlib.patches import Polygon

from ensemblemoments.constraints.obstacle import ObstacleSpec
from ensemblemoments.constraints.polyhedron import Polyhedron
from ensemblemoments.core.ensemble import MemberTrajectory

SVG_RC = {
    "svg.hashsalt": "ensemblemoments",
    "svg.fonttype": "none",
    "path.simplify": False,
    "font.size": 9,
}


def _add_polygon(axes, vertices, gid, **kwargs):
    if len(vertices) < 3:
        return None
    patch = Polygon(vertices, closed=True, **kwargs)
    patch.set_gid(gid)
    axes.add_patch(patch)
    return patch


def render_svg(
    trajectories: List[MemberTrajectory],
    constraints: Sequence = (),
    waypoints: Sequence[Polyhedron] = (),
    start=None,
    goal=None,
    title: Optional[str] = None,
    path=None,
) -> str:
    """
    Plot member paths (one polyline per member, group id member-i), exploration regions and
    waypoints as outlines (region-i, waypoint-i), obstacles as filled polygons (obstacle-i)
    and optional start and goal markers. The output is byte-identical for identical input.

    :param constraints: Polyhedron and ObstacleSpec instances
    :param path: If given, the SVG is also written there
    :return: The SVG document
    """
    regions = [c for c in constraints if isinstance(c, Polyhedron)]
    obstacles = [c for c in constraints if isinstance(c, ObstacleSpec)]
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(6.0, 6.0))
        axes = figure.add_subplot(1, 1, 1)

        for i, region in enumerate(regions):
            _add_polygon(
                axes, region.vertices(), "region-{}".format(i),
                fill=False, edgecolor="tab:green", linewidth=1.5,
            )
        for i, waypoint in enumerate(waypoints):
            _add_polygon(
                axes, waypoint.vertices(), "waypoint-{}".format(i),
                fill=False, edgecolor="tab:blue", linewidth=1.5,
            )
        for i, obstacle in enumerate(obstacles):
            _add_polygon(
                axes, obstacle.vertices(), "obstacle-{}".format(i),
                facecolor="0.4", edgecolor="0.1", alpha=0.8,
            )

        colormap = matplotlib.colormaps["viridis"]
        for i, trajectory in enumerate(trajectories):
            color = colormap(i / max(1, len(trajectories) - 1))
            (line,) = axes.plot(
                trajectory.positions[:, 0], trajectory.positions[:, 1],
                color=color, linewidth=0.6,
            )
            line.set_gid("member-{}".format(i))

        if start is not None:
            (marker,) = axes.plot([start[0]], [start[1]], marker="o", color="black", linestyle="")
            marker.set_gid("start")
        if goal is not None:
            (marker,) = axes.plot(
                [goal[0]], [goal[1]], marker="*", color="tab:red", linestyle="", markersize=10
            )
            marker.set_gid("goal")

        axes.set_aspect("equal", adjustable="datalim")
        axes.autoscale_view()
        axes.set_xlabel("x (m)")
        axes.set_ylabel("y (m)")
        axes.grid(True, linewidth=0.3)
        if title:
            axes.set_title(title)

        buffer = io.StringIO()
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    svg = buffer.getvalue()
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg)
    return svg
