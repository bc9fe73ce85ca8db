"""Offline cleaning pipeline for collected CSI packets.

Fixed stage order for a reference location: spike removal, K-means
pattern clustering (cluster count picked by averaged silhouette score),
three-stage pattern-wise denoising, then RSSI-based calibration. Test
locations skip clustering/denoising and get only the spike check plus
calibration (the online path). Clustering always works on the 57-value
magnitude sequences; phase data follows the magnitude packet indices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .core import CsiPacket, FeatureVector, SubcarrierLayout, extract_features
from .errors import DegenerateClusteringError, RejectedSampleError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SPIKE_THRESHOLD = 2000.0
DEFAULT_CC_THRESHOLD = 0.9
DEFAULT_RMSE_THRESHOLD = 125.0
DEFAULT_K_RANGE = (2, 15)
KMEANS_MAX_ITER = 300

# Two k values whose scores differ by no more than this are treated as
# tied, and the smaller k wins.
SCORE_TIE_EPS = 1e-12


@dataclass(frozen=True)
class DenoiseConfig:
    """Thresholds for spike removal and the pattern-wise denoising stages."""

    spike_threshold: float = DEFAULT_SPIKE_THRESHOLD
    psi: float = DEFAULT_CC_THRESHOLD
    chi: float = DEFAULT_RMSE_THRESHOLD

    def __post_init__(self) -> None:
        if not self.spike_threshold > 0:
            raise ValidationError("spike_threshold must be positive")
        if not -1.0 <= self.psi <= 1.0:
            raise ValidationError("psi must lie in [-1, 1]")
        if not self.chi > 0:
            raise ValidationError("chi must be positive")


@dataclass(frozen=True)
class PatternCluster:
    """One dominant CSI pattern at a location."""

    cluster_id: int
    member_indices: tuple[int, ...]
    mean_sequence: np.ndarray

    def __post_init__(self) -> None:
        if len(self.member_indices) == 0:
            raise ValidationError("pattern cluster must have members")
        seq = np.array(self.mean_sequence, dtype=np.float64)
        if seq.shape != (57,):
            raise ValidationError("mean_sequence must have length 57")
        seq.flags.writeable = False
        object.__setattr__(self, "mean_sequence", seq)


@dataclass(frozen=True)
class ClusterSelection:
    """Outcome of the silhouette-guided cluster-count search."""

    k: int
    score: float
    per_k_scores: Mapping[int, float]


class DenoiseResult(NamedTuple):
    retained: list[FeatureVector]
    removed_indices: list[int]
    mean_sequence: np.ndarray
    cc_removed_indices: list[int]
    rmse_removed_indices: list[int]


@dataclass(frozen=True)
class BudgetResult:
    """Outcome of the packet-budget determination procedure."""

    packets_consumed: int
    k: int | None
    stabilized: bool
    k_history: tuple[int, ...]


def remove_abnormal(
    packets: Sequence[FeatureVector], threshold: float = DEFAULT_SPIKE_THRESHOLD
) -> tuple[list[FeatureVector], list[int]]:
    """Drop packets whose magnitude spikes above ``threshold`` on any subcarrier.

    Returns the retained packets in original order plus the original
    positions of the removed ones.
    """
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    retained: list[FeatureVector] = []
    removed: list[int] = []
    for i, fv in enumerate(packets):
        if np.any(fv.magnitude > threshold):
            removed.append(i)
        else:
            retained.append(fv)
    return retained, removed


def magnitude_matrix(packets: Sequence[FeatureVector]) -> np.ndarray:
    """Stack packet magnitude sequences into an (n, 57) float64 matrix."""
    return np.stack([fv.magnitude for fv in packets]).astype(np.float64, copy=False)


def _pairwise_distances(data: np.ndarray) -> np.ndarray:
    """Full Euclidean distance matrix via the Gram-matrix identity.

    Identical rows produce exact zeros because both squared norms and the
    cross term come from the same product matrix.
    """
    gram = data @ data.T
    sq = np.diag(gram)
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _mean_pairwise_distance(dist: np.ndarray) -> float:
    """Mean of the strictly-upper-triangle entries; 0 for a single point."""
    m = dist.shape[0]
    if m < 2:
        return 0.0
    iu = np.triu_indices(m, k=1)
    return float(dist[iu].mean())


def kmeans(
    data: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = KMEANS_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with farthest-point seeding, bit-reproducible per seed.

    The first centroid is drawn from the seeded generator, each further
    one is the point farthest from its nearest existing centroid.
    Iteration stops when assignments stop changing or after ``max_iter``
    rounds. An emptied cluster is reseeded to the point currently
    farthest from its own centroid.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValidationError("kmeans expects a 2-D data matrix")
    n = data.shape[0]
    if k < 2:
        raise ValidationError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValidationError(f"k={k} exceeds data size {n}")

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, data.shape[1]), dtype=np.float64)
    centroids[0] = data[int(rng.integers(n))]
    # Squared distance of every point to its nearest chosen centroid.
    nearest_sq = np.sum((data - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        centroids[c] = data[int(np.argmax(nearest_sq))]
        np.minimum(nearest_sq, np.sum((data - centroids[c]) ** 2, axis=1), out=nearest_sq)

    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = (
            np.sum(data**2, axis=1)[:, None]
            - 2.0 * (data @ centroids.T)
            + np.sum(centroids**2, axis=1)[None, :]
        )
        new_assignments = np.argmin(d2, axis=1)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            members = data[assignments == c]
            if members.shape[0] == 0:
                own_d2 = d2[np.arange(n), assignments]
                centroids[c] = data[int(np.argmax(own_d2))]
            else:
                centroids[c] = members.mean(axis=0)
    # Final assignment must match the returned centroids.
    d2 = (
        np.sum(data**2, axis=1)[:, None]
        - 2.0 * (data @ centroids.T)
        + np.sum(centroids**2, axis=1)[None, :]
    )
    assignments = np.argmin(d2, axis=1)
    return assignments, centroids


def silhouette_score(data: np.ndarray, assignments: np.ndarray, k: int) -> float:
    """Averaged cluster-level silhouette.

    For each cluster i, the term (D_inter - D_intra_i) / max(D_intra_i,
    D_inter) is computed, where D_intra_i is the mean pairwise distance
    inside cluster i and D_inter is the mean pairwise distance between
    the k cluster centroids; the score is the mean over clusters. A
    cluster of one point has D_intra 0, and a 0/0 term counts as 0.
    """
    data = np.asarray(data, dtype=np.float64)
    assignments = np.asarray(assignments)
    if k < 2:
        raise ValidationError("silhouette needs at least 2 clusters")
    members = [np.flatnonzero(assignments == c) for c in range(k)]
    for c, idx in enumerate(members):
        if idx.size == 0:
            raise DegenerateClusteringError(f"cluster {c} is empty")

    centroids = np.stack([data[idx].mean(axis=0) for idx in members])
    d_inter = _mean_pairwise_distance(_pairwise_distances(centroids))

    total = 0.0
    for idx in members:
        d_intra = _mean_pairwise_distance(_pairwise_distances(data[idx]))
        denom = max(d_intra, d_inter)
        total += 0.0 if denom == 0.0 else (d_inter - d_intra) / denom
    return total / k


def select_cluster_count(
    data: np.ndarray,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
    seed: int = 0,
) -> ClusterSelection:
    """Search k in [k_min, k_max] and keep the silhouette argmax.

    Ties within SCORE_TIE_EPS go to the smaller k.
    """
    data = np.asarray(data, dtype=np.float64)
    if not 2 <= k_min <= k_max:
        raise ValidationError(f"invalid k range [{k_min}, {k_max}]")
    if k_max > data.shape[0]:
        raise ValidationError(f"k_max={k_max} exceeds data size {data.shape[0]}")

    per_k: dict[int, float] = {}
    best_k = None
    best_score = -math.inf
    for k in range(k_min, k_max + 1):
        assignments, _ = kmeans(data, k, seed=seed)
        score = silhouette_score(data, assignments, k)
        per_k[k] = score
        if score > best_score + SCORE_TIE_EPS:
            best_k, best_score = k, score
    assert best_k is not None
    return ClusterSelection(k=best_k, score=best_score, per_k_scores=per_k)


def determine_packet_budget(
    packet_stream: Iterable[FeatureVector],
    window: int = 200,
    seed: int = 0,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
) -> BudgetResult:
    """Grow the working set window by window until the pattern count settles.

    After each full window of packets the cluster count is re-selected;
    as soon as it matches the previous selection the budget is the total
    consumed so far. If the stream runs out first, the best-effort
    budget is returned with ``stabilized=False``.
    """
    if window < 1:
        raise ValidationError("window must be positive")
    stream: Iterator[FeatureVector] = iter(packet_stream)
    buf: list[FeatureVector] = []
    history: list[int] = []
    prev_k: int | None = None
    exhausted = False

    while not exhausted:
        chunk: list[FeatureVector] = []
        for _ in range(window):
            try:
                chunk.append(next(stream))
            except StopIteration:
                exhausted = True
                break
        buf.extend(chunk)
        if len(chunk) < window:
            break
        k_hi = min(k_max, len(buf))
        if k_hi < k_min:
            continue
        selection = select_cluster_count(magnitude_matrix(buf), k_min, k_hi, seed=seed)
        history.append(selection.k)
        if prev_k is not None and selection.k == prev_k:
            return BudgetResult(
                packets_consumed=len(buf),
                k=selection.k,
                stabilized=True,
                k_history=tuple(history),
            )
        prev_k = selection.k

    return BudgetResult(
        packets_consumed=len(buf),
        k=prev_k,
        stabilized=False,
        k_history=tuple(history),
    )


def _pearson_cc(row: np.ndarray, ref: np.ndarray) -> float:
    """Pearson correlation; either side with zero variance scores 0."""
    a = row - row.mean()
    b = ref - ref.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return 0.0
    return float(a @ b) / denom


def denoise_pattern(
    cluster_packets: Sequence[FeatureVector],
    config: DenoiseConfig | None = None,
) -> DenoiseResult:
    """Three-stage pattern-wise cleanup against the cluster mean sequence.

    Stage 1 fixes the per-subcarrier mean magnitude sequence over the
    whole cluster. Stage 2 removes packets whose Pearson correlation
    with that sequence is below psi, stage 3 removes survivors whose
    RMSE against it exceeds chi. Removed indices are positions in the
    input list; dropping a FeatureVector drops its phase data with it.
    """
    if config is None:
        config = DenoiseConfig()
    if len(cluster_packets) == 0:
        raise ValidationError("cannot denoise an empty cluster")

    mags = magnitude_matrix(cluster_packets)
    mean_sequence = mags.mean(axis=0)

    retained: list[FeatureVector] = []
    cc_removed: list[int] = []
    rmse_removed: list[int] = []
    for i, fv in enumerate(cluster_packets):
        if _pearson_cc(mags[i], mean_sequence) < config.psi:
            cc_removed.append(i)
            continue
        rmse = math.sqrt(float(np.mean((mags[i] - mean_sequence) ** 2)))
        if rmse > config.chi:
            rmse_removed.append(i)
            continue
        retained.append(fv)
    if not retained:
        logger.warning(
            "pattern denoising removed every packet (%d in cluster); pattern dropped",
            len(cluster_packets),
        )
    return DenoiseResult(
        retained=retained,
        removed_indices=sorted(cc_removed + rmse_removed),
        mean_sequence=mean_sequence,
        cc_removed_indices=cc_removed,
        rmse_removed_indices=rmse_removed,
    )


def lower_median(values: Sequence[float]) -> float:
    """Median that picks the lower of the two middle values for even counts."""
    if len(values) == 0:
        raise ValidationError("median of empty sequence")
    ordered = sorted(float(v) for v in values)
    return ordered[(len(ordered) - 1) // 2]


def rssi_scale_factor(rssi_values: Sequence[float]) -> float:
    """Power-to-amplitude scale factor from the location's median RSSI.

    S = sqrt(10 ** (median_dbm / 10)), the amplitude corresponding to
    the received power implied by the RSSI reading.
    """
    median = lower_median(rssi_values)
    return math.sqrt(10.0 ** (median / 10.0))


def calibrate(
    packets: Sequence[CsiPacket], rssi_values: Sequence[float] | None = None
) -> list[CsiPacket]:
    """Scale every packet's real and imaginary parts by the RSSI factor.

    ``rssi_values`` defaults to the packets' own readings. Phases are
    untouched by construction since the factor is a positive real.
    """
    packets = list(packets)
    if rssi_values is None:
        rssi_values = [p.rssi_dbm for p in packets]
    scale = rssi_scale_factor(rssi_values)
    return [replace(p, subcarriers=p.subcarriers * scale) for p in packets]


@dataclass(frozen=True)
class ClusterAudit:
    """Per-cluster retention record for the preprocessing audit log."""

    cluster_id: int
    size: int
    cc_removed: int
    rmse_removed: int
    retained: int


@dataclass(frozen=True)
class ReferenceResult:
    """Everything the offline pipeline produced for one reference location."""

    location_id: str
    features: list[FeatureVector]
    kept_original_indices: list[int]
    spike_removed_indices: list[int]
    selection: ClusterSelection
    clusters: list[PatternCluster]
    cluster_audits: list[ClusterAudit]
    scale_factor: float


@dataclass(frozen=True)
class OnlineResult:
    """Spike-checked, calibrated features for a test location."""

    location_id: str
    features: list[FeatureVector]
    kept_original_indices: list[int]
    spike_removed_indices: list[int]
    scale_factor: float


def preprocess_reference_location(
    packets: Sequence[CsiPacket],
    config: DenoiseConfig | None = None,
    k_min: int = DEFAULT_K_RANGE[0],
    k_max: int = DEFAULT_K_RANGE[1],
    seed: int = 0,
    layout: SubcarrierLayout | None = None,
) -> ReferenceResult:
    """Run the full offline pipeline for one reference location.

    The calibration factor comes from the median over all collected
    packets' RSSI readings, including ones later removed as spikes.
    """
    if config is None:
        config = DenoiseConfig()
    if layout is None:
        layout = SubcarrierLayout.standard_20mhz()
    packets = list(packets)
    if not packets:
        raise ValidationError("reference location has no packets")
    location_id = packets[0].location_id

    features = [extract_features(p, layout) for p in packets]
    retained, spike_removed = remove_abnormal(features, config.spike_threshold)
    if not retained:
        raise ValidationError(f"location {location_id}: every packet was spike-abnormal")
    orig_idx = [i for i in range(len(packets)) if i not in set(spike_removed)]

    k_hi = min(k_max, len(retained))
    if k_hi < k_min:
        raise ValidationError(
            f"location {location_id}: only {len(retained)} clean packets, "
            f"cannot search k >= {k_min}"
        )
    selection = select_cluster_count(magnitude_matrix(retained), k_min, k_hi, seed=seed)
    assignments, _ = kmeans(magnitude_matrix(retained), selection.k, seed=seed)

    kept_positions: list[int] = []
    clusters: list[PatternCluster] = []
    audits: list[ClusterAudit] = []
    for c in range(selection.k):
        member_pos = np.flatnonzero(assignments == c)
        result = denoise_pattern([retained[i] for i in member_pos], config)
        audits.append(
            ClusterAudit(
                cluster_id=c,
                size=int(member_pos.size),
                cc_removed=len(result.cc_removed_indices),
                rmse_removed=len(result.rmse_removed_indices),
                retained=len(result.retained),
            )
        )
        surviving = [int(member_pos[i]) for i in range(member_pos.size)
                     if i not in set(result.removed_indices)]
        if surviving:
            clusters.append(
                PatternCluster(
                    cluster_id=c,
                    member_indices=tuple(orig_idx[i] for i in surviving),
                    mean_sequence=result.mean_sequence,
                )
            )
            kept_positions.extend(surviving)
    kept_positions.sort()
    kept_original = [orig_idx[i] for i in kept_positions]

    rssi_values = [p.rssi_dbm for p in packets]
    scale = rssi_scale_factor(rssi_values)
    calibrated = calibrate([packets[i] for i in kept_original], rssi_values)
    final_features = [extract_features(p, layout) for p in calibrated]

    return ReferenceResult(
        location_id=location_id,
        features=final_features,
        kept_original_indices=kept_original,
        spike_removed_indices=spike_removed,
        selection=selection,
        clusters=clusters,
        cluster_audits=audits,
        scale_factor=scale,
    )


def preprocess_online_packets(
    packets: Sequence[CsiPacket],
    config: DenoiseConfig | None = None,
    rssi_values: Sequence[float] | None = None,
    layout: SubcarrierLayout | None = None,
) -> OnlineResult:
    """Online-path preprocessing: spike check and calibration, no denoising."""
    if config is None:
        config = DenoiseConfig()
    if layout is None:
        layout = SubcarrierLayout.standard_20mhz()
    packets = list(packets)
    if not packets:
        raise ValidationError("no packets to preprocess")
    if rssi_values is None:
        rssi_values = [p.rssi_dbm for p in packets]

    features = [extract_features(p, layout) for p in packets]
    _, spike_removed = remove_abnormal(features, config.spike_threshold)
    removed_set = set(spike_removed)
    kept = [i for i in range(len(packets)) if i not in removed_set]

    scale = rssi_scale_factor(rssi_values)
    calibrated = calibrate([packets[i] for i in kept], rssi_values)
    final_features = [extract_features(p, layout) for p in calibrated]
    return OnlineResult(
        location_id=packets[0].location_id,
        features=final_features,
        kept_original_indices=kept,
        spike_removed_indices=spike_removed,
        scale_factor=scale,
    )


def check_online_packet(
    packet: CsiPacket,
    config: DenoiseConfig | None = None,
    layout: SubcarrierLayout | None = None,
) -> FeatureVector:
    """Extract features for one online packet, rejecting spike-abnormal ones.

    Raises RejectedSampleError so the caller can retry with another
    packet. No calibration is applied here; use
    ``preprocess_online_packets`` when a location's RSSI set is known.
    """
    if config is None:
        config = DenoiseConfig()
    fv = extract_features(packet, layout)
    if np.any(fv.magnitude > config.spike_threshold):
        raise RejectedSampleError(
            f"packet seq={packet.sequence_no}: magnitude exceeds "
            f"{config.spike_threshold}, sample rejected"
        )
    return fv
