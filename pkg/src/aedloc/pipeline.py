"""End-to-end orchestration: dataset synthesis, feature caching, model
training and system runs. This is the glue shared by the CLI, the
evaluation protocol and the test suites.

A dataset is a list of sessions. Every session carries a clean one-source
recording (isolated events, including a few isolated speech instances so
the speech model is trainable) and, in two-source mode, an overlapped
view of the same take where each event is buried under a power-matched
speech segment. Models are always trained on clean recordings, using the
beamformer channel steered at each event's true cell.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    ComboInventory,
    SrpConfig,
    classify_segment,
    srp_event_localize,
    train_all_combinations,
)
from .beamform import SteeringBeamformer, design_beamformers
from .evaluate import EventRecord
from .features import extract_features, frames_to_interval, interval_to_frames
from .hmm import DecodedSequence, ModelInventory, TrainConfig, train_baum_welch
from .joint import (
    EventHypothesis,
    channel_features,
    detected_intervals,
    recognize_localize,
    step1_detect,
)
from .scene import (
    SILENCE_LABEL,
    SPEECH_LABEL,
    ArrayGeometry,
    CellGrid,
    PriorTable,
    SceneConfig,
    cell_of,
    default_grid,
    estimate_position_priors,
    load_scene,
    save_scene,
)
from .synth import (
    ANECHOIC,
    MultichannelRecording,
    RoomAcoustics,
    SourceEvent,
    TEMPLATE_LABELS,
    load_raw,
    matched_power_copy,
    read_ground_truth,
    render_recording,
    save_raw,
    synth_class_waveform,
    write_ground_truth,
)

SNR_SINGLE_DB = 18.7
SNR_OVERLAPPED_DB = 17.5


def _wall_array(array_id, anchor, axis, spacing=0.35):
    """Three collinear microphones centered on `anchor` along `axis`."""
    offsets = np.array([-spacing, 0.0, spacing])
    mics = np.tile(np.asarray(anchor, dtype=float), (3, 1))
    mics[:, axis] += offsets
    return ArrayGeometry(array_id, mics)


def default_scene() -> SceneConfig:
    """Reference-shaped scene: 6x6 grid, six 3-mic arrays on the walls."""
    grid = default_grid()
    w, h = grid.extent
    arrays = (
        _wall_array(0, (w * 0.25, 0.03), axis=0),
        _wall_array(1, (w * 0.75, 0.03), axis=0),
        _wall_array(2, (0.03, h * 0.5), axis=1),
        _wall_array(3, (w - 0.03, h * 0.5), axis=1),
        _wall_array(4, (w * 0.25, h - 0.03), axis=0),
        _wall_array(5, (w * 0.75, h - 0.03), axis=0),
    )
    return SceneConfig(
        room_size=(w, h),
        arrays=arrays,
        grid=grid,
        classes=("knock", "chime", "buzz", "hiss", SPEECH_LABEL, SILENCE_LABEL),
        sample_rate=16000,
    )


def acceptance_scene() -> SceneConfig:
    """Desk-scale scene: 4x4 cell grid, three 3-mic arrays on the walls."""
    grid = CellGrid(nx=4, ny=4, cell_size=(0.85, 1.05))
    w, h = grid.extent
    arrays = (
        _wall_array(0, (w * 0.5, 0.03), axis=0),
        _wall_array(1, (0.03, h * 0.78), axis=1),
        _wall_array(2, (w - 0.03, h * 0.30), axis=1),
    )
    return SceneConfig(
        room_size=(w, h),
        arrays=arrays,
        grid=grid,
        classes=("knock", "chime", "buzz", "hiss", SPEECH_LABEL, SILENCE_LABEL),
        sample_rate=16000,
    )


def speaker_cell(scene: SceneConfig) -> int:
    """Fixed interferer cell at the left side, mid-height."""
    w, h = scene.room_size
    return cell_of((0.15 * w, 0.5 * h), scene.grid)


@dataclass
class DatasetConfig:
    n_sessions: int = 8
    ae_events_per_session: int = 12
    speech_events_per_session: int = 3
    duration_range: tuple[float, float] = (0.5, 0.8)
    gap_range: tuple[float, float] = (0.35, 0.7)
    lead_s: float = 0.4
    snr_single_db: float = SNR_SINGLE_DB
    snr_overlapped_db: float = SNR_OVERLAPPED_DB
    two_source: bool = True
    random_speaker: bool = False
    hot_cell_fraction: float = 0.35  # cells carrying most of the placement mass
    hot_cell_weight: float = 8.0
    centroid_placement: bool = True  # sources sit at cell centroids (reference protocol)
    cell_margin: float = 0.12  # with free placement, fraction of the cell kept off its edges
    acoustics: RoomAcoustics = ANECHOIC
    seed: int = 0


@dataclass
class Session:
    session_id: str
    clean: MultichannelRecording
    overlapped: MultichannelRecording | None = None

    def recording(self, view: str) -> MultichannelRecording:
        if view == "clean":
            return self.clean
        if view == "overlapped":
            if self.overlapped is None:
                raise ValueError(f"session {self.session_id} has no overlapped view")
            return self.overlapped
        raise ValueError(f"unknown view {view!r}")


def ae_events(recording: MultichannelRecording, scene: SceneConfig) -> list[SourceEvent]:
    ids = set(scene.ae_class_ids)
    return [e for e in recording.events if e.class_id in ids]


def placement_weights(scene: SceneConfig, cfg: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    """Non-uniform cell placement, with the speaker cell off limits."""
    p = scene.n_cells
    n_hot = max(1, int(round(cfg.hot_cell_fraction * p)))
    hot = rng.choice(p, size=n_hot, replace=False)
    weights = np.ones(p)
    weights[hot] = cfg.hot_cell_weight
    weights[speaker_cell(scene)] = 0.0
    return weights / weights.sum()


def _point_in_cell(grid: CellGrid, cell: int, rng: np.random.Generator, margin: float = 0.1):
    """Uniform point inside a cell, keeping `margin` (fraction) off the edges."""
    x0, y0, x1, y1 = grid.cell_rect(cell)
    mx = margin * (x1 - x0)
    my = margin * (y1 - y0)
    return (float(rng.uniform(x0 + mx, x1 - mx)), float(rng.uniform(y0 + my, y1 - my)))


def _place(scene: SceneConfig, cell: int, rng: np.random.Generator, cfg: "DatasetConfig"):
    """Source point for an event: the centroid, or a jittered in-cell spot.

    The centroid draw still consumes rng state so both placement modes walk
    the same random sequence.
    """
    point = _point_in_cell(scene.grid, cell, rng, cfg.cell_margin)
    return scene.grid.centroid(cell) if cfg.centroid_placement else point


def generate_session(
    scene: SceneConfig, cfg: DatasetConfig, session_index: int, session_id: str | None = None
) -> Session:
    """One deterministic session: a clean take plus its overlapped twin."""
    rng = np.random.default_rng([cfg.seed, session_index])
    template_of = {i: TEMPLATE_LABELS.index(scene.classes[i]) for i in scene.ae_class_ids}
    speech_template = TEMPLATE_LABELS.index(SPEECH_LABEL)
    weights = placement_weights(scene, cfg, np.random.default_rng([cfg.seed, 911]))
    sp_cell = speaker_cell(scene)
    sp_point = _place(scene, sp_cell, rng, cfg)  # the speaker sits still

    # balanced class draw: every AE class appears about equally often
    ae_ids = list(scene.ae_class_ids)
    classes = (ae_ids * math.ceil(cfg.ae_events_per_session / len(ae_ids)))[
        : cfg.ae_events_per_session
    ]
    rng.shuffle(classes)
    kinds = classes + ["speech"] * cfg.speech_events_per_session
    rng.shuffle(kinds)

    t = cfg.lead_s
    clean_events: list[SourceEvent] = []
    for kind in kinds:
        duration = float(rng.uniform(*cfg.duration_range))
        seed = int(rng.integers(1 << 31))
        if kind == "speech":
            class_id = scene.speech_id
            if cfg.random_speaker:
                cell = int(rng.integers(scene.n_cells))
                point = _place(scene, cell, rng, cfg)
            else:
                cell, point = sp_cell, sp_point
            wav = synth_class_waveform(speech_template, duration, scene.sample_rate, seed)
        else:
            class_id = kind
            cell = int(rng.choice(scene.n_cells, p=weights))
            point = _place(scene, cell, rng, cfg)
            wav = synth_class_waveform(template_of[class_id], duration, scene.sample_rate, seed)
        clean_events.append(SourceEvent(class_id, cell, t, duration, wav, position=point))
        t += duration + float(rng.uniform(*cfg.gap_range))
    total = t + cfg.lead_s - float(np.mean(cfg.gap_range))

    clean = render_recording(
        clean_events, scene, cfg.snr_single_db, seed=int(rng.integers(1 << 31)),
        duration=total, acoustics=cfg.acoustics,
    )

    overlapped = None
    if cfg.two_source:
        # a long speech stream supplies random-position interferer cuts
        stream = synth_class_waveform(
            speech_template, total, scene.sample_rate, int(rng.integers(1 << 31))
        )
        ov_events: list[SourceEvent] = []
        for ev in clean_events:
            if ev.class_id not in scene.ae_class_ids:
                continue  # isolated speech takes are dropped from the overlapped view
            n = len(ev.waveform)
            start = int(rng.integers(0, len(stream) - n))
            cut = matched_power_copy(ev.waveform, stream[start : start + n])
            if cfg.random_speaker:
                sp_c = int(rng.integers(scene.n_cells))
                sp_p = _place(scene, sp_c, rng, cfg)
            else:
                sp_c, sp_p = sp_cell, sp_point
            ov_events.append(ev)
            ov_events.append(
                SourceEvent(
                    scene.speech_id, sp_c, ev.start_time, ev.duration, cut, position=sp_p
                )
            )
        overlapped = render_recording(
            ov_events, scene, cfg.snr_overlapped_db, seed=int(rng.integers(1 << 31)),
            duration=total, acoustics=cfg.acoustics,
        )

    sid = session_id or f"s{session_index + 1:02d}"
    return Session(session_id=sid, clean=clean, overlapped=overlapped)


def generate_dataset(scene: SceneConfig, cfg: DatasetConfig) -> list[Session]:
    return [generate_session(scene, cfg, i) for i in range(cfg.n_sessions)]


# -- dataset on disk -----------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(sessions: list[Session], scene: SceneConfig, out_dir, seed: int | None = None) -> dict:
    """Write recordings (raw float32 planar), truth sidecars and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    save_scene(scene, os.path.join(out_dir, "scene.json"))
    manifest = {
        "version": 1,
        "seed": seed,
        "sample_rate": scene.sample_rate,
        "n_channels": scene.n_mics_total,
        "sessions": [],
    }
    for sess in sessions:
        rel = os.path.join("sessions", sess.session_id)
        sdir = os.path.join(out_dir, rel)
        os.makedirs(sdir, exist_ok=True)
        entry = {"id": sess.session_id, "files": {}}
        views = [("clean", sess.clean)]
        if sess.overlapped is not None:
            views.append(("overlapped", sess.overlapped))
        for name, rec in views:
            audio = os.path.join(rel, f"{name}.f32")
            truth = os.path.join(rel, f"{name}_truth.txt")
            save_raw(os.path.join(out_dir, audio), rec.channels)
            write_ground_truth(os.path.join(out_dir, truth), rec.events, scene)
            entry["files"][name] = {
                "audio": audio,
                "truth": truth,
                "n_samples": rec.n_samples,
                "snr_db": rec.snr_db,
                "sha256": _sha256(os.path.join(out_dir, audio)),
            }
        manifest["sessions"].append(entry)
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(dataset_dir) -> tuple[SceneConfig, list[Session]]:
    manifest_path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing dataset manifest: {manifest_path}")
    scene = load_scene(os.path.join(dataset_dir, "scene.json"))
    with open(manifest_path) as f:
        manifest = json.load(f)
    sessions = []
    for entry in manifest["sessions"]:
        views = {}
        for name, info in entry["files"].items():
            audio_path = os.path.join(dataset_dir, info["audio"])
            truth_path = os.path.join(dataset_dir, info["truth"])
            for p in (audio_path, truth_path):
                if not os.path.exists(p):
                    raise FileNotFoundError(f"dataset file missing: {p}")
            channels = load_raw(audio_path, scene.n_mics_total).astype(np.float64)
            events = read_ground_truth(truth_path, scene)
            views[name] = MultichannelRecording(
                channels=channels,
                sample_rate=scene.sample_rate,
                events=events,
                snr_db=info.get("snr_db", math.nan),
            )
        sessions.append(
            Session(
                session_id=entry["id"],
                clean=views["clean"],
                overlapped=views.get("overlapped"),
            )
        )
    return scene, sessions


# -- training ------------------------------------------------------------------

SILENCE_MARGIN_S = 0.10  # clearance kept around events when cutting silence


@dataclass
class SystemConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    insertion_penalty: float = 0.0
    prior_smoothing: bool = True
    min_segment_frames: int = 3
    min_event_frames: int = 3  # step-1 events shorter than this are dropped


def silence_intervals(recording: MultichannelRecording, margin_s: float = SILENCE_MARGIN_S):
    """Gaps between events (margins removed), as (start_s, end_s) pairs."""
    bounds = sorted((ev.start_time, ev.end_time) for ev in recording.events)
    out = []
    cursor = 0.0
    for start, end in bounds:
        if start - margin_s > cursor + margin_s:
            out.append((cursor + margin_s, start - margin_s))
        cursor = max(cursor, end)
    tail = recording.duration
    if tail - margin_s > cursor + margin_s:
        out.append((cursor + margin_s, tail - margin_s))
    return out


def collect_training_segments(
    sessions: list[Session],
    scene: SceneConfig,
    beamformers: dict[tuple[int, int], SteeringBeamformer],
    min_frames: int = 3,
) -> dict[tuple[int, str], list[np.ndarray]]:
    """Cut labeled feature segments from the clean recordings.

    Event segments come from the beamformer steered at the event's true
    cell. Silence segments rotate round-robin over cells so the silence
    model sees every steering direction.
    """
    segments: dict[tuple[int, str], list[np.ndarray]] = {}
    for sess in sessions:
        rec = sess.clean
        silences = silence_intervals(rec)
        needed_cells = sorted(
            {ev.cell_id for ev in rec.events}
            | {gi % scene.n_cells for gi in range(len(silences))}
        )
        pairs = [(k, j) for k in range(scene.n_arrays) for j in needed_cells]
        feats = channel_features(rec, scene, beamformers, pairs=pairs)
        n_frames = min(f.n_frames for f in feats.values())
        for k in range(scene.n_arrays):
            for ev in sorted(rec.events, key=lambda e: e.start_time):
                a, b = interval_to_frames(ev.start_time, ev.end_time, scene.sample_rate, n_frames)
                if b - a >= min_frames:
                    label = scene.classes[ev.class_id]
                    segments.setdefault((k, label), []).append(
                        feats[(k, ev.cell_id)].segment(a, b)
                    )
            for gi, (start, end) in enumerate(silences):
                a, b = interval_to_frames(start, end, scene.sample_rate, n_frames)
                if b - a >= min_frames:
                    cell = gi % scene.n_cells
                    segments.setdefault((k, SILENCE_LABEL), []).append(
                        feats[(k, cell)].segment(a, b)
                    )
    return segments


def train_inventory(
    sessions: list[Session],
    scene: SceneConfig,
    beamformers: dict[tuple[int, int], SteeringBeamformer],
    cfg: SystemConfig | None = None,
) -> tuple[ModelInventory, dict[tuple[int, str], list[float]]]:
    """Train one model per (array, class incl. silence) on clean takes.

    Returns the inventory and the Baum-Welch log-likelihood trajectories
    keyed like the models (useful for monotonicity checks and debugging).
    """
    cfg = cfg or SystemConfig()
    segments = collect_training_segments(sessions, scene, beamformers, cfg.min_segment_frames)
    inventory = ModelInventory()
    trajectories: dict[tuple[int, str], list[float]] = {}
    for k in range(scene.n_arrays):
        # corpus-level variance of this array's features anchors the floor,
        # keeping likelihoods comparable across classes
        corpus = np.concatenate(
            [s for label in scene.classes for s in segments.get((k, label), [])]
        )
        corpus_var = corpus.var(axis=0)
        for label in scene.classes:
            key = (k, label)
            if key not in segments:
                raise ValueError(f"no training segments for class {label!r} on array {k}")
            model, traj = train_baum_welch(
                segments[key], label, k, cfg.train, floor_variance=corpus_var
            )
            inventory.add(model)
            trajectories[key] = traj
    inventory.validate()
    return inventory, trajectories


def estimate_priors(sessions: list[Session], scene: SceneConfig, smoothing: bool = True) -> PriorTable:
    """Position priors counted from the training sessions' ground truth.

    Only the scored event classes are counted: the interferer's fixed
    position is knowledge the system must not exploit.
    """
    ae_ids = set(scene.ae_class_ids)
    events = [
        (ev.class_id, ev.cell_id)
        for sess in sessions
        for ev in sess.clean.events
        if ev.class_id in ae_ids
    ]
    return estimate_position_priors(events, scene.grid, scene.n_classes, smoothing=smoothing)


# -- running -------------------------------------------------------------------

@dataclass
class RunResult:
    """System output for one recording plus the step-1 byproducts."""

    hypotheses: list[EventHypothesis]
    step1: DecodedSequence | None = None
    min_event_frames: int = 3

    def step1_hypotheses(self, scene: SceneConfig) -> list[EventHypothesis]:
        """Detection-only output: step-1 labels with no cell decision."""
        if self.step1 is None:
            return []
        out = []
        for label, a, b in detected_intervals(self.step1, SILENCE_LABEL, self.min_event_frames):
            out.append(
                EventHypothesis(
                    class_id=scene.classes.index(label),
                    cell_id=-1,
                    start_frame=a,
                    end_frame=b,
                    score=self.step1.score,
                )
            )
        return out


def hypotheses_to_records(hypotheses, scene: SceneConfig) -> list[EventRecord]:
    """Convert system hypotheses to scored records (speech/silence kept;
    evaluation callers filter by label)."""
    out = []
    for h in hypotheses:
        start_s, end_s = frames_to_interval(h.start_frame, h.end_frame, scene.sample_rate)
        label = scene.classes[h.class_id] if h.class_id >= 0 else "-"
        out.append(EventRecord(label=label, start_s=start_s, end_s=end_s, cell_id=h.cell_id))
    return out


def truth_to_records(
    recording: MultichannelRecording, scene: SceneConfig, ae_only: bool = True
) -> list[EventRecord]:
    events = ae_events(recording, scene) if ae_only else recording.events
    return [
        EventRecord(
            label=scene.classes[ev.class_id],
            start_s=ev.start_time,
            end_s=ev.end_time,
            cell_id=ev.cell_id,
        )
        for ev in sorted(events, key=lambda e: e.start_time)
    ]


def ae_records(records: list[EventRecord], scene: SceneConfig) -> list[EventRecord]:
    """Keep only the scored acoustic-event classes."""
    ae_labels = {scene.classes[i] for i in scene.ae_class_ids}
    return [r for r in records if r.label in ae_labels]


def truth_frame_intervals(
    recording: MultichannelRecording, scene: SceneConfig, n_frames: int
) -> tuple[list[tuple[int, int]], list[SourceEvent]]:
    """Known-endpoint intervals: the ground-truth AE events, in frames."""
    intervals, used = [], []
    for ev in sorted(ae_events(recording, scene), key=lambda e: e.start_time):
        a, b = interval_to_frames(ev.start_time, ev.end_time, scene.sample_rate, n_frames)
        if b - a >= 3:
            intervals.append((a, b))
            used.append(ev)
    return intervals, used


def run_recording(
    recording: MultichannelRecording,
    scene: SceneConfig,
    inventory: ModelInventory,
    priors: PriorTable,
    *,
    n_sources: int = 1,
    known_endpoints: bool = False,
    known_position: bool = False,
    beamformers: dict[tuple[int, int], SteeringBeamformer] | None = None,
    features=None,
    system: SystemConfig | None = None,
) -> RunResult:
    """Run the proposed system on one recording under one condition."""
    system = system or SystemConfig()
    if features is None:
        features = channel_features(recording, scene, beamformers)
    n_frames = min(f.n_frames for f in features.values())

    fixed_cells = None
    step1 = None
    if known_endpoints or known_position:
        intervals, used = truth_frame_intervals(recording, scene, n_frames)
        if known_position:
            fixed_cells = [ev.cell_id for ev in used]
    else:
        step1 = step1_detect(features, inventory, scene.classes, system.insertion_penalty)[0]
        intervals = [
            (a, b)
            for _lab, a, b in detected_intervals(step1, SILENCE_LABEL, system.min_event_frames)
        ]

    hypotheses = recognize_localize(
        recording,
        scene,
        inventory,
        priors,
        n_sources,
        features=features,
        intervals=intervals,
        fixed_cells=fixed_cells,
        insertion_penalty=system.insertion_penalty,
    )
    return RunResult(hypotheses=hypotheses, step1=step1, min_event_frames=system.min_event_frames)


# -- baseline training and the variant runner -----------------------------------

def collect_combo_segments(
    sessions: list[Session], scene: SceneConfig, mic_index: int = 0, min_frames: int = 3
):
    """Single-channel training material for the combination-model baseline.

    Isolated segments come from the clean takes, mixture segments from the
    overlapped takes, silence from the clean takes' gaps; all on the raw
    microphone `mic_index` (no beamforming).
    """
    isolated: dict[str, list[np.ndarray]] = {}
    mixed: dict[str, list[np.ndarray]] = {}
    silence: list[np.ndarray] = []
    for sess in sessions:
        for view, target in (("clean", isolated), ("overlapped", mixed)):
            rec = sess.clean if view == "clean" else sess.overlapped
            if rec is None:
                continue
            feats = extract_features(rec.channels[mic_index], scene.sample_rate)
            for ev in sorted(rec.events, key=lambda e: e.start_time):
                label = scene.classes[ev.class_id]
                if view == "overlapped" and label == SPEECH_LABEL:
                    continue  # the interferer itself is not a training class here
                a, b = interval_to_frames(
                    ev.start_time, ev.end_time, scene.sample_rate, feats.n_frames
                )
                if b - a >= min_frames:
                    target.setdefault(label, []).append(feats.segment(a, b))
            if view == "clean":
                for start, end in silence_intervals(rec):
                    a, b = interval_to_frames(start, end, scene.sample_rate, feats.n_frames)
                    if b - a >= min_frames:
                        silence.append(feats.segment(a, b))
    return isolated, mixed, silence


def train_combo_inventory(
    sessions: list[Session],
    scene: SceneConfig,
    cfg: SystemConfig | None = None,
    mic_index: int = 0,
) -> ComboInventory:
    cfg = cfg or SystemConfig()
    isolated, mixed, silence = collect_combo_segments(
        sessions, scene, mic_index, cfg.min_segment_frames
    )
    return train_all_combinations(isolated, mixed, silence, cfg.train, channel=mic_index)


VARIANTS = (
    "proposed-flat",
    "proposed-priors",
    "known-position",
    "known-endpoints",
    "srp-phat",
    "all-combinations",
)


@dataclass
class TrainedSystem:
    """Everything a variant run needs, produced from training sessions only."""

    scene: SceneConfig
    beamformers: dict[tuple[int, int], SteeringBeamformer]
    inventory: ModelInventory | None = None
    priors_flat: PriorTable | None = None
    priors_est: PriorTable | None = None
    combo: ComboInventory | None = None
    system: SystemConfig = field(default_factory=SystemConfig)


def train_system(
    sessions: list[Session],
    scene: SceneConfig,
    cfg: SystemConfig | None = None,
    with_combo: bool = False,
) -> TrainedSystem:
    cfg = cfg or SystemConfig()
    bank = design_beamformers(scene)
    inventory, _ = train_inventory(sessions, scene, bank, cfg)
    return TrainedSystem(
        scene=scene,
        beamformers=bank,
        inventory=inventory,
        priors_flat=PriorTable.flat(scene.n_classes, scene.n_cells),
        priors_est=estimate_priors(sessions, scene, cfg.prior_smoothing),
        combo=train_combo_inventory(sessions, scene, cfg) if with_combo else None,
        system=cfg,
    )


def run_variant(
    trained: TrainedSystem,
    recording: MultichannelRecording,
    variant: str,
    n_sources: int = 1,
    srp_config: SrpConfig | None = None,
    features=None,
) -> RunResult:
    """Run one system variant on one recording.

    The srp-phat and all-combinations baselines follow the reference
    protocol: they work from known (ground-truth) event end-points.
    """
    scene = trained.scene
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r} (choose from {VARIANTS})")
    if variant == "srp-phat":
        hyps = []
        for ev in sorted(ae_events(recording, scene), key=lambda e: e.start_time):
            cells = srp_event_localize(
                recording.channels,
                scene,
                ev.start_time,
                ev.end_time,
                srp_config or SrpConfig(),
                n_sources=n_sources,
            )
            a, b = interval_to_frames(ev.start_time, ev.end_time, scene.sample_rate, 10**9)
            hyps.extend(
                EventHypothesis(class_id=-1, cell_id=c, start_frame=a, end_frame=b, score=0.0)
                for c in cells
            )
        return RunResult(hypotheses=hyps)
    if variant == "all-combinations":
        if trained.combo is None:
            raise ValueError("variant 'all-combinations' needs a trained combination bank")
        feats = extract_features(
            recording.channels[trained.combo.channel], scene.sample_rate
        )
        hyps = []
        for ev in sorted(ae_events(recording, scene), key=lambda e: e.start_time):
            a, b = interval_to_frames(ev.start_time, ev.end_time, scene.sample_rate, feats.n_frames)
            if b - a < 3:
                continue
            label = classify_segment(trained.combo, feats.segment(a, b))
            hyps.append(
                EventHypothesis(
                    class_id=scene.classes.index(label),
                    cell_id=-1,
                    start_frame=a,
                    end_frame=b,
                    score=0.0,
                )
            )
        return RunResult(hypotheses=hyps)
    priors = trained.priors_flat if variant == "proposed-flat" else trained.priors_est
    return run_recording(
        recording,
        scene,
        trained.inventory,
        priors,
        n_sources=n_sources,
        known_endpoints=variant == "known-endpoints",
        known_position=variant == "known-position",
        beamformers=trained.beamformers,
        features=features,
        system=trained.system,
    )
