"""Per-radar observation model and preprocessing.

Observation: true scene points are censored by field of view, range and a
distance/occlusion detection model, then perturbed by sensor noise; spurious
outlier points are appended. Preprocessing transforms the local cloud to the
global frame and removes outliers via density clustering.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .scene import Scene

log = logging.getLogger(__name__)

LOCAL = "local"
GLOBAL = "global"
OUTLIER = -1

# Resolvable-scale default shared by noise floors elsewhere in the pipeline.
RANGE_RESOLUTION = 0.042  # meters

# Injected outlier points are drawn uniformly over the FOV sector in the
# horizontal plane and uniformly in height over this band.
OUTLIER_Z_MAX = 2.0  # meters


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RadarPose:
    """Radar mounting pose in the global frame."""

    position: np.ndarray  # (3,) meters
    yaw: float  # radians, boresight azimuth

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError("radar position must be three finite coordinates")
        object.__setattr__(self, "position", pos)
        yaw = math.atan2(math.sin(self.yaw), math.cos(self.yaw))
        if yaw == -math.pi:  # normalize to (-pi, pi]
            yaw = math.pi
        object.__setattr__(self, "yaw", yaw)


@dataclass(frozen=True)
class RadarModel:
    """Sensing model of one radar.

    ``detection_range_ref`` sets the range at which per-point detection
    starts to degrade: p_d(r) = min(1, (ref / r)^2). A point whose line of
    sight passes within ``occlusion_width`` of a nearer target center keeps
    only ``occlusion_attenuation`` of its detection probability.
    """

    fov_azimuth: float = math.radians(60.0)  # half angle, radians
    max_range: float = 12.0  # meters
    range_resolution: float = RANGE_RESOLUTION  # meters
    azimuth_resolution: float = math.radians(25.0)  # radians
    noise_sigma: float = 0.12  # per-axis std dev, meters
    outlier_rate: float = 5.0  # expected outliers per frame
    detection_range_ref: float = 5.0  # meters
    occlusion_width: float = 0.35  # meters
    occlusion_attenuation: float = 0.1

    def __post_init__(self):
        positive = (
            self.fov_azimuth,
            self.max_range,
            self.range_resolution,
            self.azimuth_resolution,
            self.detection_range_ref,
            self.occlusion_width,
        )
        if not all(v > 0 for v in positive):
            raise ValueError("radar model parameters must be strictly positive")
        if self.noise_sigma < 0 or self.outlier_rate < 0:
            raise ValueError("noise_sigma and outlier_rate must be >= 0")


@dataclass
class PointCloud:
    """One frame of radar detections.

    ``truth_outlier`` tags the injected spurious points; it is simulator
    ground truth carried along for diagnostics, never transmitted.
    """

    frame: str
    points: np.ndarray  # (n, 3)
    epoch: int
    radar_id: int
    truth_outlier: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray  # (n,) int, OUTLIER for noise points
    n_clusters: int


def _occlusion_factor(scene: Scene, pose: RadarPose, model: RadarModel) -> np.ndarray:
    """Per-point attenuation from target centers shadowing the line of sight."""
    n = len(scene.points)
    factor = np.ones(n)
    if n == 0 or len(scene.centers) < 2:
        return factor
    p0 = pose.position[:2]
    seg = scene.points[:, :2] - p0  # radar -> point, ground plane
    seg_len2 = np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-12)
    for tid, center in scene.centers.items():
        d = center - p0
        t = (seg @ d) / seg_len2
        perp = np.linalg.norm(t[:, None] * seg - d, axis=1)
        blocked = (
            (scene.target_ids != tid)
            & (t > 0.0)
            & (t < 1.0)
            & (perp < model.occlusion_width)
            & (np.dot(d, d) < seg_len2)
        )
        factor[blocked] *= model.occlusion_attenuation
    return factor


def observe(
    scene: Scene,
    pose: RadarPose,
    model: RadarModel,
    rng: np.random.Generator,
    radar_id: int = -1,
) -> PointCloud:
    """Form the raw local-frame cloud for one radar at the scene's epoch.

    Per-point randomness is drawn for every scene point before censoring, so
    shrinking the FOV or range under the same seed only removes points.
    """
    pts = scene.points
    n = len(pts)
    local = (pts - pose.position) @ rot_z(pose.yaw)  # row-vector form of R(-yaw) @ v
    r = np.linalg.norm(local, axis=1)
    az = np.arctan2(local[:, 1], local[:, 0])

    u = rng.random(n)
    noise = rng.standard_normal((n, 3)) * model.noise_sigma

    p_d = np.minimum(1.0, (model.detection_range_ref / np.maximum(r, 1e-9)) ** 2)
    p_d = p_d * _occlusion_factor(scene, pose, model)
    detected = (r <= model.max_range) & (np.abs(az) <= model.fov_azimuth) & (u < p_d)
    measured = local[detected] + noise[detected]

    n_out = int(rng.poisson(model.outlier_rate))
    out_az = rng.uniform(-model.fov_azimuth, model.fov_azimuth, n_out)
    out_rho = model.max_range * np.sqrt(rng.random(n_out))  # uniform over the sector area
    out_z = rng.uniform(0.0, OUTLIER_Z_MAX, n_out)
    outliers = np.column_stack([out_rho * np.cos(out_az), out_rho * np.sin(out_az), out_z])

    points = np.concatenate([measured, outliers]) if n_out else measured.copy()
    truth = np.concatenate([np.zeros(len(measured), bool), np.ones(n_out, bool)])
    return PointCloud(LOCAL, points, scene.epoch, radar_id, truth)


def to_global_frame(cloud: PointCloud, pose: RadarPose) -> PointCloud:
    """Rotate by the radar yaw and translate by its position."""
    if cloud.frame != LOCAL:
        raise ValueError(f"expected a {LOCAL}-frame cloud, got {cloud.frame!r}")
    points = cloud.points @ rot_z(pose.yaw).T + pose.position
    return replace(cloud, frame=GLOBAL, points=points)


def to_local_frame(cloud: PointCloud, pose: RadarPose) -> PointCloud:
    if cloud.frame != GLOBAL:
        raise ValueError(f"expected a {GLOBAL}-frame cloud, got {cloud.frame!r}")
    points = (cloud.points - pose.position) @ rot_z(pose.yaw)
    return replace(cloud, frame=LOCAL, points=points)


def dbscan(cloud: PointCloud, eps: float, min_pts: int) -> ClusterResult:
    """Density clustering over the cloud's 3D points.

    A point is core iff it has >= min_pts neighbors within eps (itself
    included). Clusters are connected core points plus border points; a
    border point reachable from several clusters joins the cluster of its
    first core neighbor in input order, which makes the result deterministic
    for a given point order.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = cloud.points
    n = len(pts)
    labels = np.full(n, OUTLIER, dtype=int)
    if n == 0:
        return ClusterResult(labels, 0)

    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")  # (e, 2), i < j, dist <= eps
    degree = np.bincount(pairs.ravel(), minlength=n)
    core = degree + 1 >= min_pts  # the point itself counts as a neighbor
    core_idx = np.nonzero(core)[0]
    if core_idx.size == 0:
        return ClusterResult(labels, 0)

    compact = np.full(n, -1)
    compact[core_idx] = np.arange(core_idx.size)
    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    graph = csr_matrix(
        (np.ones(len(cc)), (compact[cc[:, 0]], compact[cc[:, 1]])),
        shape=(core_idx.size, core_idx.size),
    )
    _, comp = connected_components(graph, directed=False)
    # Relabel components by first appearance so cluster ids follow input order.
    _, first_pos, relabel = np.unique(comp, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos))
    labels[core_idx] = order[relabel]
    n_clusters = len(first_pos)

    half = core[pairs[:, 0]] ^ core[pairs[:, 1]]  # border-to-core edges
    border = np.where(core[pairs[half, 0]], pairs[half, 1], pairs[half, 0])
    anchor = np.where(core[pairs[half, 0]], pairs[half, 0], pairs[half, 1])
    if border.size:
        by_border = np.lexsort((anchor, border))
        uniq, first = np.unique(border[by_border], return_index=True)
        labels[uniq] = labels[anchor[by_border][first]]  # first core neighbor in input order
    return ClusterResult(labels, n_clusters)


def preprocess(
    cloud: PointCloud,
    pose: RadarPose,
    eps: float,
    min_pts: int,
) -> tuple[PointCloud, ClusterResult]:
    """Displacement correction plus outlier removal.

    Returns the surviving global-frame points and their clustering (labels
    re-indexed to the survivors, so every label is a valid cluster id).
    """
    global_cloud = to_global_frame(cloud, pose)
    clusters = dbscan(global_cloud, eps, min_pts)
    keep = clusters.labels != OUTLIER
    filtered = replace(
        global_cloud,
        points=global_cloud.points[keep],
        truth_outlier=None if cloud.truth_outlier is None else cloud.truth_outlier[keep],
    )
    return filtered, ClusterResult(clusters.labels[keep], clusters.n_clusters)
