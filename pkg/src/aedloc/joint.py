"""Two-step joint recognition and localization across all arrays.

Step 1 decodes every (array, cell) beamformer channel and keeps the
segmentation of the channel with the highest Viterbi score; only the
time end-points survive. Step 2 scores each detected interval with every
class model on every channel, giving a K x P x C log-likelihood tensor
per event, and picks (class, cell) by maximizing the sum over arrays plus
log class/position priors. With two simultaneous sources the decision is
applied twice, excluding the first winner's class and cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamform import SteeringBeamformer, apply_beamformer, design_beamformers
from .features import FeatureSequence, extract_features, frames_to_interval
from .hmm import DecodedSequence, ModelInventory, forward_loglik_batch, viterbi_decode
from .scene import SILENCE_LABEL, PriorTable, SceneConfig
from .synth import MultichannelRecording


@dataclass
class LikelihoodTensor:
    """Per-event log-likelihoods indexed [array][cell][class]."""

    start_frame: int
    end_frame: int
    scores: np.ndarray  # (K, P, C)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 3:
            raise ValueError("scores must be a (K, P, C) tensor")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("likelihood tensor contains non-finite entries")
        if self.end_frame <= self.start_frame:
            raise ValueError("empty event interval")


@dataclass
class EventHypothesis:
    """One decided event: class, cell and interval with its fused score."""

    class_id: int
    cell_id: int
    start_frame: int
    end_frame: int
    score: float


def channel_features(
    recording: MultichannelRecording,
    scene: SceneConfig,
    beamformers: dict[tuple[int, int], SteeringBeamformer] | None = None,
    pairs: list[tuple[int, int]] | None = None,
) -> dict[tuple[int, int], FeatureSequence]:
    """Beamform (array, cell) channels and extract their features.

    This front end is shared by both processing steps; compute it once
    per recording and pass it along. `pairs` restricts the work to a
    subset of channels (training only needs the matched ones).
    """
    if beamformers is None:
        beamformers = design_beamformers(scene)
    if pairs is None:
        pairs = [(k, j) for k in range(scene.n_arrays) for j in range(scene.n_cells)]
    out: dict[tuple[int, int], FeatureSequence] = {}
    for k, j in pairs:
        chans = recording.channels[scene.channel_slice(k)]
        steered = apply_beamformer(beamformers[(k, j)], chans)
        out[(k, j)] = extract_features(steered, scene.sample_rate, channel=(k, j))
    return out


def step1_detect(
    features: dict[tuple[int, int], FeatureSequence],
    inventory: ModelInventory,
    label_order: tuple[str, ...],
    insertion_penalty: float = 0.0,
    n_best: int = 1,
) -> list[DecodedSequence]:
    """Decode all channels and rank them by total Viterbi score.

    Returns the n_best decodings, best first; ties resolve to the lowest
    (array, cell) pair. Only the segment end-points of the winner are
    meant to flow onward.
    """
    decoded: list[DecodedSequence] = []
    for (k, j) in sorted(features):
        models = inventory.for_array(k, label_order)
        decoded.append(
            viterbi_decode(models, features[(k, j)].data, insertion_penalty, channel=(k, j))
        )
    decoded.sort(key=lambda d: (-d.score, d.channel))
    return decoded[:n_best]


def detected_intervals(
    decoded: DecodedSequence,
    silence_label: str = SILENCE_LABEL,
    min_frames: int = 3,
) -> list[tuple[str, int, int]]:
    """Event intervals from a decoded channel.

    Adjacent same-label segments merge (re-entering a model mid-event is
    indistinguishable from staying in it) and events shorter than
    `min_frames` are discarded.
    """
    merged: list[tuple[str, int, int]] = []
    for label, a, b in decoded.segments:
        if label == silence_label:
            continue
        if merged and merged[-1][0] == label and merged[-1][2] == a:
            merged[-1] = (label, merged[-1][1], b)
        else:
            merged.append((label, a, b))
    return [(lab, a, b) for (lab, a, b) in merged if b - a >= min_frames]


def build_likelihood_tensor(
    start_frame: int,
    end_frame: int,
    features: dict[tuple[int, int], FeatureSequence],
    inventory: ModelInventory,
    label_order: tuple[str, ...],
    scene: SceneConfig,
) -> LikelihoodTensor:
    """Score one event interval with every (array, cell, class) triple."""
    n_frames = min(f.n_frames for f in features.values())
    if not (0 <= start_frame < end_frame <= n_frames):
        raise ValueError(f"interval [{start_frame}, {end_frame}) outside feature extent")
    scores = np.empty((scene.n_arrays, scene.n_cells, len(label_order)))
    for k in range(scene.n_arrays):
        segs = np.stack(
            [features[(k, j)].segment(start_frame, end_frame) for j in range(scene.n_cells)]
        )
        for i, label in enumerate(label_order):
            scores[k, :, i] = forward_loglik_batch(inventory.get(k, label), segs)
    return LikelihoodTensor(start_frame=start_frame, end_frame=end_frame, scores=scores)


def map_decide(
    tensor: LikelihoodTensor,
    priors: PriorTable,
    excluded_classes: set[int] | None = None,
    excluded_cells: set[int] | None = None,
    allowed_cells: set[int] | None = None,
) -> EventHypothesis:
    """MAP (class, cell) decision fusing all arrays by a log-score sum.

    total(i, j) = sum_k scores[k][j][i] + log class_prior[i]
    + log position_prior[j]; the argmax runs over the non-excluded
    domain, breaking ties toward the lowest (class, cell) pair.
    """
    _, n_cells, n_classes = tensor.scores.shape
    if len(priors.class_priors) != n_classes or len(priors.position_priors) != n_cells:
        raise ValueError("prior table does not match the tensor shape")
    with np.errstate(divide="ignore"):
        total = (
            tensor.scores.sum(axis=0)
            + np.log(priors.position_priors)[:, None]
            + np.log(priors.class_priors)[None, :]
        )
    if excluded_classes:
        total[:, sorted(excluded_classes)] = -np.inf
    if excluded_cells:
        total[sorted(excluded_cells), :] = -np.inf
    if allowed_cells is not None:
        mask = np.ones(n_cells, dtype=bool)
        mask[sorted(allowed_cells)] = False
        total[mask, :] = -np.inf
    by_class = total.T  # (C, P): row-major argmax = lowest (class, cell) on ties
    flat = int(np.argmax(by_class))
    best = by_class.flat[flat]
    if not np.isfinite(best):
        raise ValueError("no admissible (class, cell) pair has nonzero prior mass")
    class_id, cell_id = divmod(flat, n_cells)
    return EventHypothesis(
        class_id=class_id,
        cell_id=cell_id,
        start_frame=tensor.start_frame,
        end_frame=tensor.end_frame,
        score=float(best),
    )


def recognize_localize(
    recording: MultichannelRecording,
    scene: SceneConfig,
    inventory: ModelInventory,
    priors: PriorTable,
    n_sources: int = 1,
    *,
    beamformers: dict[tuple[int, int], SteeringBeamformer] | None = None,
    features: dict[tuple[int, int], FeatureSequence] | None = None,
    intervals: list[tuple[int, int]] | None = None,
    fixed_cells: list[int] | None = None,
    insertion_penalty: float = 0.0,
    min_event_frames: int = 3,
) -> list[EventHypothesis]:
    """Full pipeline for one recording: detect, then classify + localize.

    `intervals` (frame pairs) skips step 1 for known-endpoint runs;
    `fixed_cells` additionally pins each interval's cell (known-position
    runs). With n_sources=2 every interval yields a second hypothesis
    whose class and cell both differ from the first. Silence decisions
    are dropped; speech decisions are kept (evaluation filters them).
    """
    if n_sources not in (1, 2):
        raise ValueError("n_sources must be 1 or 2")
    if features is None:
        features = channel_features(recording, scene, beamformers)
    label_order = scene.classes
    if intervals is None:
        best = step1_detect(features, inventory, label_order, insertion_penalty)[0]
        intervals = [
            (s, e)
            for (_lab, s, e) in detected_intervals(best, SILENCE_LABEL, min_event_frames)
        ]
        fixed_cells = None

    silence_id = scene.silence_id
    hypotheses: list[EventHypothesis] = []
    for idx, (start, end) in enumerate(intervals):
        tensor = build_likelihood_tensor(start, end, features, inventory, label_order, scene)
        allowed = {fixed_cells[idx]} if fixed_cells is not None else None
        first = map_decide(tensor, priors, allowed_cells=allowed)
        if first.class_id != silence_id:
            hypotheses.append(first)
        if n_sources == 2:
            second = map_decide(
                tensor,
                priors,
                excluded_classes={first.class_id},
                excluded_cells=None if allowed is not None else {first.cell_id},
                allowed_cells=allowed,
            )
            if second.class_id != silence_id:
                hypotheses.append(second)
    return hypotheses


# -- hypothesis files ----------------------------------------------------------

HYPOTHESIS_HEADER = "# class cell cx cy start_s end_s score"


def write_hypotheses(path, hypotheses: list[EventHypothesis], scene: SceneConfig) -> None:
    """One event per line: class label, cell, centroid (m), interval (s), score.

    Speech-class lines are written like any other; consumers filter on the
    label. The class column is '-' when a hypothesis carries no class
    (position-only baselines).
    """
    with open(path, "w") as f:
        f.write(HYPOTHESIS_HEADER + "\n")
        for h in hypotheses:
            label = scene.classes[h.class_id] if h.class_id >= 0 else "-"
            cx, cy = scene.grid.centroid(h.cell_id)
            start_s, end_s = frames_to_interval(h.start_frame, h.end_frame, scene.sample_rate)
            f.write(
                f"{label} {h.cell_id} {cx:.4f} {cy:.4f} {start_s:.6f} {end_s:.6f} {h.score:.6f}\n"
            )


@dataclass
class HypothesisRecord:
    """A hypothesis file line; class label '-' means position-only."""

    label: str
    cell_id: int
    start_s: float
    end_s: float
    score: float


def read_hypotheses(path) -> list[HypothesisRecord]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            label, cell, _cx, _cy, start_s, end_s, score = line.split()
            out.append(
                HypothesisRecord(
                    label=label,
                    cell_id=int(cell),
                    start_s=float(start_s),
                    end_s=float(end_s),
                    score=float(score),
                )
            )
    return out
