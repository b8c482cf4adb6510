"""HMM-GMM event models: Baum-Welch training, forward scoring, and
continuous Viterbi decoding over a loop of models.

Each model is left-to-right with three emitting states (self-loop +
advance only; entry in the first state, exit from the last) and a
diagonal-covariance Gaussian mixture per state. Decoding connects all
models of one array in a uniform loop, so any model can follow any other;
an optional log-domain insertion penalty discourages over-segmentation.
All probability arithmetic is done in the log domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

LOG_ZERO = -np.inf
_PROB_CLAMP = 1e-8  # keeps re-estimated transition probabilities strictly interior


@dataclass
class TrainConfig:
    n_states: int = 3
    n_components: int = 4
    max_iter: int = 15
    tol: float = 1e-4
    seed: int = 0
    var_floor_frac: float = 1e-3  # fraction of the global per-dimension variance


@dataclass
class GmmState:
    """Diagonal-covariance Gaussian mixture emission density."""

    weights: np.ndarray    # (n_components,)
    means: np.ndarray      # (n_components, dim)
    variances: np.ndarray  # (n_components, dim)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @cached_property
    def _score_terms(self):
        inv_var = 1.0 / self.variances
        const = -0.5 * (
            self.dim * np.log(2 * np.pi)
            + np.sum(np.log(self.variances), axis=1)
            + np.sum(self.means**2 * inv_var, axis=1)
        ) + np.log(self.weights)
        return inv_var, self.means * inv_var, const

    def component_log_prob(self, frames: np.ndarray) -> np.ndarray:
        """Per-component weighted log densities, shape (T, n_components)."""
        inv_var, mean_over_var, const = self._score_terms
        frames = np.atleast_2d(frames)
        quad = -0.5 * (frames**2) @ inv_var.T + frames @ mean_over_var.T
        return quad + const

    def log_prob(self, frames: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_prob(frames), axis=1)


@dataclass
class EventModel:
    """Left-to-right HMM for one class on one array's beamformer outputs."""

    label: str
    array_id: int
    states: tuple[GmmState, ...]
    self_loops: np.ndarray  # (n_states,), P(stay); the rest advances/exits

    def __post_init__(self):
        self.states = tuple(self.states)
        self.self_loops = np.asarray(self.self_loops, dtype=float)
        if len(self.self_loops) != len(self.states):
            raise ValueError("one self-loop probability per state")
        if np.any(self.self_loops <= 0) or np.any(self.self_loops >= 1):
            raise ValueError("self-loop probabilities must lie strictly in (0, 1)")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @cached_property
    def log_self(self) -> np.ndarray:
        return np.log(self.self_loops)

    @cached_property
    def log_advance(self) -> np.ndarray:
        # from state i to i+1 for i < last; from the last state this is the exit
        return np.log1p(-self.self_loops)

    def state_log_likelihoods(self, frames: np.ndarray) -> np.ndarray:
        """(T, n_states) log emission densities."""
        return np.stack([s.log_prob(frames) for s in self.states], axis=1)


def forward_loglik(model: EventModel, frames: np.ndarray) -> float:
    """Log-likelihood of a feature segment under one whole model.

    Sums over all state paths that start in the first state and leave
    from the last one; log-domain throughout, so segments up to 1e4
    frames stay finite.
    """
    frames = np.atleast_2d(frames)
    t_len = frames.shape[0]
    if t_len < model.n_states:
        raise ValueError(
            f"segment of {t_len} frames is shorter than the {model.n_states}-state model"
        )
    b = model.state_log_likelihoods(frames)
    alpha = np.full(model.n_states, LOG_ZERO)
    alpha[0] = b[0, 0]
    for t in range(1, t_len):
        stay = alpha + model.log_self
        move = np.full(model.n_states, LOG_ZERO)
        move[1:] = alpha[:-1] + model.log_advance[:-1]
        alpha = np.logaddexp(stay, move) + b[t]
    return float(alpha[-1] + model.log_advance[-1])


def forward_loglik_batch(model: EventModel, frames_batch: np.ndarray) -> np.ndarray:
    """forward_loglik for a (B, T, dim) stack of equally-long segments."""
    b_n, t_len, _ = frames_batch.shape
    if t_len < model.n_states:
        raise ValueError("segments shorter than the model")
    flat = frames_batch.reshape(b_n * t_len, -1)
    b = model.state_log_likelihoods(flat).reshape(b_n, t_len, model.n_states)
    alpha = np.full((b_n, model.n_states), LOG_ZERO)
    alpha[:, 0] = b[:, 0, 0]
    for t in range(1, t_len):
        stay = alpha + model.log_self
        move = np.full_like(alpha, LOG_ZERO)
        move[:, 1:] = alpha[:, :-1] + model.log_advance[:-1]
        alpha = np.logaddexp(stay, move) + b[:, t]
    return alpha[:, -1] + model.log_advance[-1]


@dataclass
class DecodedSequence:
    """Viterbi segmentation of one channel: labeled, contiguous segments."""

    segments: list[tuple[str, int, int]]  # (label, start_frame, end_frame), end exclusive
    score: float
    channel: tuple[int, int] | None = None

    def event_segments(self, silence_label: str = "silence") -> list[tuple[str, int, int]]:
        return [s for s in self.segments if s[0] != silence_label]


def viterbi_decode(
    models: list[EventModel],
    frames: np.ndarray,
    insertion_penalty: float = 0.0,
    channel: tuple[int, int] | None = None,
) -> DecodedSequence:
    """Best labeling of a whole channel under a uniform model loop.

    Entry is uniform over models; after any model exit the decoder may
    enter any model with probability 1/n_models (times the optional
    insertion penalty). The returned score is the full Viterbi path
    log-probability including entry/exit terms.
    """
    frames = np.atleast_2d(frames)
    t_len = frames.shape[0]
    if t_len == 0:
        raise ValueError("cannot decode an empty feature sequence")
    n_m = len(models)
    if n_m == 0:
        raise ValueError("need at least one model")

    # flatten (model, state) into one state list
    offsets = np.cumsum([0] + [m.n_states for m in models])
    n_flat = offsets[-1]
    log_self = np.concatenate([m.log_self for m in models])
    log_adv = np.concatenate([m.log_advance for m in models])
    is_first = np.zeros(n_flat, dtype=bool)
    is_last = np.zeros(n_flat, dtype=bool)
    state_model = np.empty(n_flat, dtype=np.int32)
    for i, m in enumerate(models):
        is_first[offsets[i]] = True
        is_last[offsets[i + 1] - 1] = True
        state_model[offsets[i] : offsets[i + 1]] = i
    log_exit = np.where(is_last, log_adv, LOG_ZERO)
    log_entry = -np.log(n_m) + insertion_penalty

    b = np.concatenate([m.state_log_likelihoods(frames) for m in models], axis=1)

    delta = np.full(n_flat, LOG_ZERO)
    delta[is_first] = b[0, is_first] - np.log(n_m)
    # backpointer codes: 0 stay, 1 advance from previous state, 2 re-entry
    back = np.zeros((t_len, n_flat), dtype=np.int8)
    exit_src = np.zeros(t_len, dtype=np.int32)

    adv_in = np.full(n_flat, LOG_ZERO)
    for t in range(1, t_len):
        stay = delta + log_self
        adv_in[1:] = delta[:-1] + np.where(is_last[:-1], LOG_ZERO, log_adv[:-1])
        exit_scores = delta + log_exit
        src = int(np.argmax(exit_scores))
        enter = exit_scores[src] + log_entry
        exit_src[t] = src

        best = stay
        choice = np.zeros(n_flat, dtype=np.int8)
        better = adv_in > best
        best = np.where(better, adv_in, best)
        choice[better] = 1
        entering = is_first & (enter > best)
        best = np.where(entering, enter, best)
        choice[entering] = 2
        delta = best + b[t]
        back[t] = choice

    final = delta + log_exit
    state = int(np.argmax(final))
    score = float(final[state])

    path = np.empty(t_len, dtype=np.int32)
    path[-1] = state
    for t in range(t_len - 1, 0, -1):
        code = back[t, state]
        if code == 0:
            pass
        elif code == 1:
            state -= 1
        else:
            state = exit_src[t]
        path[t - 1] = state

    segments: list[tuple[str, int, int]] = []
    seg_start = 0
    current = state_model[path[0]]
    for t in range(1, t_len):
        m = state_model[path[t]]
        jumped = back[t, path[t]] == 2
        if m != current or jumped:
            segments.append((models[current].label, seg_start, t))
            seg_start = t
            current = m
    segments.append((models[current].label, seg_start, t_len))
    return DecodedSequence(segments=segments, score=score, channel=channel)


# -- training -----------------------------------------------------------------

def _kmeans(frames: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10):
    n = len(frames)
    idx = rng.choice(n, size=k, replace=n < k)
    centers = frames[idx].copy()
    assign = np.zeros(n, dtype=int)
    for _ in range(iters):
        d2 = ((frames[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        for c in range(k):
            sel = assign == c
            if sel.any():
                centers[c] = frames[sel].mean(axis=0)
            else:  # re-seed an empty cluster on the farthest point
                centers[c] = frames[int(np.argmax(d2.min(axis=1)))]
    return centers, assign


def _init_states(
    segments: list[np.ndarray], cfg: TrainConfig, floor: np.ndarray, rng: np.random.Generator
) -> list[GmmState]:
    per_state: list[list[np.ndarray]] = [[] for _ in range(cfg.n_states)]
    for seg in segments:
        for s, chunk in enumerate(np.array_split(seg, cfg.n_states)):
            if len(chunk):
                per_state[s].append(chunk)
    states = []
    for s in range(cfg.n_states):
        frames = np.concatenate(per_state[s]) if per_state[s] else np.concatenate(segments)
        centers, assign = _kmeans(frames, cfg.n_components, rng)
        weights = np.zeros(cfg.n_components)
        variances = np.empty_like(centers)
        for c in range(cfg.n_components):
            sel = assign == c
            weights[c] = max(sel.sum(), 1e-3)
            variances[c] = np.maximum(frames[sel].var(axis=0) if sel.any() else floor, floor)
        states.append(GmmState(weights / weights.sum(), centers, variances))
    return states


def _forward_backward(model: EventModel, b: np.ndarray):
    """Log alpha/beta over one segment; returns (alpha, beta, total)."""
    t_len, n_s = b.shape
    l_self, l_adv = model.log_self, model.log_advance
    alpha = np.full((t_len, n_s), LOG_ZERO)
    alpha[0, 0] = b[0, 0]
    for t in range(1, t_len):
        stay = alpha[t - 1] + l_self
        move = np.full(n_s, LOG_ZERO)
        move[1:] = alpha[t - 1, :-1] + l_adv[:-1]
        alpha[t] = np.logaddexp(stay, move) + b[t]
    total = alpha[-1, -1] + l_adv[-1]
    beta = np.full((t_len, n_s), LOG_ZERO)
    beta[-1, -1] = l_adv[-1]
    for t in range(t_len - 2, -1, -1):
        stay = l_self + b[t + 1] + beta[t + 1]
        move = np.full(n_s, LOG_ZERO)
        move[:-1] = l_adv[:-1] + b[t + 1, 1:] + beta[t + 1, 1:]
        beta[t] = np.logaddexp(stay, move)
    return alpha, beta, total


def train_baum_welch(
    segments: list[np.ndarray],
    label: str,
    array_id: int,
    cfg: TrainConfig | None = None,
    floor_variance: np.ndarray | None = None,
) -> tuple[EventModel, list[float]]:
    """Fit one event model to labeled feature segments.

    Returns the model and the per-iteration total log-likelihood
    trajectory, which is non-decreasing (up to the variance floor and a
    1e-6 slack). Segments shorter than the state count are rejected.
    The variance floor is cfg.var_floor_frac times `floor_variance`
    (corpus-level per-dimension variance when training a whole inventory;
    defaults to this class's own data variance).
    """
    cfg = cfg or TrainConfig()
    segments = [np.atleast_2d(np.asarray(s, dtype=float)) for s in segments]
    if not segments:
        raise ValueError("no training segments")
    if any(len(s) < cfg.n_states for s in segments):
        raise ValueError(f"all segments must have at least {cfg.n_states} frames")

    all_frames = np.concatenate(segments)
    global_var = all_frames.var(axis=0)
    if np.all(global_var < 1e-12):
        warnings.warn(
            f"training data for {label!r} has (near-)constant features; "
            "variance flooring keeps the model proper",
            stacklevel=2,
        )
    if floor_variance is None:
        floor_variance = global_var
    floor = np.maximum(cfg.var_floor_frac * floor_variance, 1e-8)

    rng = np.random.default_rng(cfg.seed)
    states = _init_states(segments, cfg, floor, rng)
    self_loops = np.full(cfg.n_states, 0.6)
    model = EventModel(label=label, array_id=array_id, states=tuple(states), self_loops=self_loops)

    dim = all_frames.shape[1]
    trajectory: list[float] = []
    for _ in range(cfg.max_iter):
        occ = np.zeros((cfg.n_states, cfg.n_components))
        sum_x = np.zeros((cfg.n_states, cfg.n_components, dim))
        sum_x2 = np.zeros((cfg.n_states, cfg.n_components, dim))
        stay_count = np.zeros(cfg.n_states)
        leave_count = np.zeros(cfg.n_states)
        total_ll = 0.0

        for seg in segments:
            comp = np.stack(
                [st.component_log_prob(seg) for st in model.states], axis=1
            )  # (T, S, C)
            b = logsumexp(comp, axis=2)
            alpha, beta, seg_ll = _forward_backward(model, b)
            total_ll += seg_ll
            log_gamma = alpha + beta - seg_ll
            gamma_c = np.exp(log_gamma[:, :, None] + comp - b[:, :, None])
            occ += gamma_c.sum(axis=0)
            sum_x += np.einsum("tsc,td->scd", gamma_c, seg)
            sum_x2 += np.einsum("tsc,td->scd", gamma_c, seg**2)
            t_len = len(seg)
            if t_len > 1:
                xi_stay = np.exp(
                    alpha[:-1] + model.log_self + b[1:] + beta[1:] - seg_ll
                ).sum(axis=0)
                xi_move = np.exp(
                    alpha[:-1, :-1] + model.log_advance[:-1] + b[1:, 1:] + beta[1:, 1:] - seg_ll
                ).sum(axis=0)
            else:
                xi_stay = np.zeros(cfg.n_states)
                xi_move = np.zeros(cfg.n_states - 1)
            stay_count += xi_stay
            leave_count[:-1] += xi_move
            leave_count[-1] += np.exp(log_gamma[-1, -1])  # exit occupancy

        trajectory.append(float(total_ll))
        if len(trajectory) > 1:
            prev = trajectory[-2]
            if total_ll - prev < cfg.tol * abs(prev):
                break

        denom = stay_count + leave_count
        new_self = np.where(denom > 0, stay_count / np.maximum(denom, 1e-300), 0.5)
        new_self = np.clip(new_self, _PROB_CLAMP, 1 - _PROB_CLAMP)
        new_states = []
        for s in range(cfg.n_states):
            state_occ = occ[s]
            w = state_occ / state_occ.sum()
            keep = state_occ < 1e-8  # starved components keep their parameters
            mean = np.where(
                keep[:, None], model.states[s].means,
                sum_x[s] / np.maximum(state_occ[:, None], 1e-300),
            )
            var = np.where(
                keep[:, None], model.states[s].variances,
                sum_x2[s] / np.maximum(state_occ[:, None], 1e-300) - mean**2,
            )
            var = np.maximum(var, floor)
            w = np.maximum(w, 1e-10)
            new_states.append(GmmState(w / w.sum(), mean, var))
        model = EventModel(
            label=label, array_id=array_id, states=tuple(new_states), self_loops=new_self
        )
    return model, trajectory


# -- inventory ----------------------------------------------------------------

@dataclass
class ModelInventory:
    """Per-array model sets sharing one common label list (incl. silence)."""

    models: dict[tuple[int, str], EventModel] = field(default_factory=dict)

    def add(self, model: EventModel) -> None:
        self.models[(model.array_id, model.label)] = model

    @property
    def array_ids(self) -> tuple[int, ...]:
        return tuple(sorted({k for k, _ in self.models}))

    @property
    def labels(self) -> tuple[str, ...]:
        first = self.array_ids[0]
        return tuple(sorted(lab for k, lab in self.models if k == first))

    def get(self, array_id: int, label: str) -> EventModel:
        return self.models[(array_id, label)]

    def for_array(self, array_id: int, label_order: tuple[str, ...] | None = None) -> list[EventModel]:
        order = label_order if label_order is not None else self.labels
        return [self.models[(array_id, lab)] for lab in order]

    def validate(self) -> None:
        sets = {}
        for k, lab in self.models:
            sets.setdefault(k, set()).add(lab)
        if len({frozenset(v) for v in sets.values()}) > 1:
            raise ValueError("arrays carry different class sets")


FORMAT_VERSION = 1


def save_inventory(inventory: ModelInventory, path) -> None:
    """Exact (binary float64) round-trip serialization to .npz."""
    inventory.validate()
    payload: dict[str, np.ndarray] = {
        "format_version": np.array([FORMAT_VERSION]),
        "keys": np.array([f"{k}|{lab}" for (k, lab) in sorted(inventory.models)]),
    }
    for (k, lab) in sorted(inventory.models):
        m = inventory.models[(k, lab)]
        base = f"m/{k}/{lab}"
        payload[f"{base}/self_loops"] = m.self_loops
        for s, st in enumerate(m.states):
            payload[f"{base}/s{s}/weights"] = st.weights
            payload[f"{base}/s{s}/means"] = st.means
            payload[f"{base}/s{s}/variances"] = st.variances
    np.savez(path, **payload)


def load_inventory(path) -> ModelInventory:
    data = np.load(path, allow_pickle=False)
    version = int(data["format_version"][0])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    inv = ModelInventory()
    for key in data["keys"]:
        k_str, label = str(key).split("|", 1)
        k = int(k_str)
        base = f"m/{k}/{label}"
        self_loops = data[f"{base}/self_loops"]
        states = []
        for s in range(len(self_loops)):
            states.append(
                GmmState(
                    weights=data[f"{base}/s{s}/weights"],
                    means=data[f"{base}/s{s}/means"],
                    variances=data[f"{base}/s{s}/variances"],
                )
            )
        inv.add(EventModel(label=label, array_id=k, states=tuple(states), self_loops=self_loops))
    return inv
