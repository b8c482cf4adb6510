import itertools

import numpy as np
import pytest

from aedloc.hmm import (
    DecodedSequence,
    EventModel,
    GmmState,
    ModelInventory,
    TrainConfig,
    forward_loglik,
    forward_loglik_batch,
    load_inventory,
    save_inventory,
    train_baum_welch,
    viterbi_decode,
)


def gaussian_state(mean, var=1.0, dim=2):
    return GmmState(
        weights=np.array([1.0]),
        means=np.full((1, dim), float(mean)),
        variances=np.full((1, dim), float(var)),
    )


def simple_model(label="m", array_id=0, means=(0.0, 1.0, 2.0), self_loops=(0.5, 0.5, 0.5), dim=2):
    states = tuple(gaussian_state(m, dim=dim) for m in means)
    return EventModel(label=label, array_id=array_id, states=states, self_loops=np.array(self_loops))


def brute_force_forward(model, frames):
    """Oracle: explicit sum over every state path (entry state 0, exit from last)."""
    t_len = len(frames)
    n_s = model.n_states
    b = np.exp(model.state_log_likelihoods(frames))
    self_p = model.self_loops
    adv_p = 1.0 - self_p
    total = 0.0
    for path in itertools.product(range(n_s), repeat=t_len):
        if path[0] != 0 or path[-1] != n_s - 1:
            continue
        p = b[0, path[0]]
        ok = True
        for t in range(1, t_len):
            if path[t] == path[t - 1]:
                p *= self_p[path[t - 1]]
            elif path[t] == path[t - 1] + 1:
                p *= adv_p[path[t - 1]]
            else:
                ok = False
                break
            p *= b[t, path[t]]
        if ok:
            total += p * adv_p[-1]  # exit from the last state
    return np.log(total)


def brute_force_viterbi(models, frames):
    """Oracle: max over all composite (model, state) paths of the loop decoder."""
    n_m = len(models)
    flat = [(i, s) for i, m in enumerate(models) for s in range(m.n_states)]
    b = {
        (i, s): models[i].states[s].log_prob(frames)
        for i, m in enumerate(models)
        for s in range(m.n_states)
    }
    log_entry = -np.log(n_m)
    best = -np.inf
    t_len = len(frames)

    def trans(a, c):
        (i, s), (j, u) = a, c
        m = models[i]
        if i == j and u == s:
            return m.log_self[s]
        if i == j and u == s + 1 and s < m.n_states - 1:
            return m.log_advance[s]
        if s == m.n_states - 1 and u == 0:
            return m.log_advance[s] + log_entry
        return -np.inf

    for path in itertools.product(flat, repeat=t_len):
        i0, s0 = path[0]
        if s0 != 0:
            continue
        il, sl = path[-1]
        if sl != models[il].n_states - 1:
            continue
        score = log_entry + b[path[0]][0]
        for t in range(1, t_len):
            score += trans(path[t - 1], path[t])
            if score == -np.inf:
                break
            score += b[path[t]][t]
        score += models[il].log_advance[sl]
        best = max(best, score)
    return best


class TestForward:
    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(0)
        model = simple_model(means=(0.0, 1.5, 3.0), self_loops=(0.4, 0.6, 0.7))
        frames = rng.standard_normal((6, 2)) + 1.0
        assert forward_loglik(model, frames) == pytest.approx(
            brute_force_forward(model, frames), abs=1e-8
        )

    def test_duplicated_component_leaves_likelihood_unchanged(self):
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((8, 2))
        base = simple_model()
        split_states = []
        for st in base.states:
            split_states.append(
                GmmState(
                    weights=np.array([0.5, 0.5]),
                    means=np.vstack([st.means, st.means]),
                    variances=np.vstack([st.variances, st.variances]),
                )
            )
        split = EventModel("m", 0, tuple(split_states), base.self_loops)
        assert forward_loglik(split, frames) == pytest.approx(
            forward_loglik(base, frames), abs=1e-10
        )

    def test_long_sequence_stays_finite(self):
        rng = np.random.default_rng(2)
        model = simple_model()
        frames = rng.standard_normal((10_000, 2))
        assert np.isfinite(forward_loglik(model, frames))

    def test_short_segment_rejected(self):
        with pytest.raises(ValueError):
            forward_loglik(simple_model(), np.zeros((2, 2)))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        model = simple_model(self_loops=(0.3, 0.8, 0.55))
        batch = rng.standard_normal((5, 9, 2))
        out = forward_loglik_batch(model, batch)
        for i in range(5):
            assert out[i] == pytest.approx(forward_loglik(model, batch[i]), abs=1e-10)


class TestViterbi:
    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(4)
        models = [
            simple_model("a", means=(-1.0, 0.0, 1.0), self_loops=(0.5, 0.4, 0.6)),
            simple_model("b", means=(2.0, 3.0, 4.0), self_loops=(0.7, 0.5, 0.3)),
        ]
        frames = rng.standard_normal((5, 2)) * 2.0
        decoded = viterbi_decode(models, frames)
        assert decoded.score == pytest.approx(brute_force_viterbi(models, frames), abs=1e-8)

    def test_segments_partition_time(self):
        rng = np.random.default_rng(5)
        models = [simple_model("a", means=(-1, 0, 1)), simple_model("b", means=(3, 4, 5))]
        frames = rng.standard_normal((40, 2))
        decoded = viterbi_decode(models, frames)
        assert decoded.segments[0][1] == 0
        assert decoded.segments[-1][2] == 40
        for (seg, nxt) in zip(decoded.segments, decoded.segments[1:]):
            assert seg[2] == nxt[1]
            assert seg[2] > seg[1]

    def test_recovers_constructed_segmentation(self):
        rng = np.random.default_rng(6)
        silence = simple_model("silence", means=(-3.0, -3.0, -3.0))
        event = simple_model("ping", means=(2.0, 3.0, 4.0))
        seq = np.vstack(
            [
                rng.normal(-3.0, 0.3, (20, 2)),
                np.linspace([2.0, 2.0], [4.0, 4.0], 15) + rng.normal(0, 0.3, (15, 2)),
                rng.normal(-3.0, 0.3, (25, 2)),
            ]
        )
        decoded = viterbi_decode([silence, event], seq)
        labels = [s[0] for s in decoded.segments]
        assert labels == ["silence", "ping", "silence"]
        assert abs(decoded.segments[1][1] - 20) <= 2
        assert abs(decoded.segments[1][2] - 35) <= 2

    def test_all_silence_single_segment(self):
        rng = np.random.default_rng(7)
        silence = simple_model("silence", means=(0.0, 0.0, 0.0))
        event = simple_model("ping", means=(8.0, 9.0, 10.0))
        frames = rng.normal(0.0, 0.4, (30, 2))
        decoded = viterbi_decode([silence, event], frames)
        assert decoded.segments == [("silence", 0, 30)]
        assert decoded.event_segments() == []

    def test_viterbi_bounded_by_forward_of_same_labels(self):
        """max over alignments <= sum over alignments for the decoded labeling."""
        rng = np.random.default_rng(8)
        models = [
            simple_model("a", means=(-1.0, 0.0, 1.0)),
            simple_model("b", means=(2.5, 3.5, 4.5)),
        ]
        frames = np.vstack([rng.normal(0, 1, (9, 2)), rng.normal(3.5, 1, (8, 2))])
        decoded = viterbi_decode(models, frames)
        chain = [next(m for m in models if m.label == lab) for lab, _, _ in decoded.segments]
        log_entry = -np.log(len(models))
        # forward over the fixed model chain with the same entry costs
        alphas = None
        for m_idx, model in enumerate(chain):
            b = model.state_log_likelihoods(frames)
            n_s = model.n_states
            t_len = len(frames)
            if m_idx == 0:
                alpha = np.full((t_len, n_s), -np.inf)
                alpha[0, 0] = log_entry + b[0, 0]
                start_t = 1
                prev_exit = np.full(t_len, -np.inf)
            else:
                alpha = np.full((t_len, n_s), -np.inf)
                for t in range(1, t_len):
                    alpha[t, 0] = prev_exit[t - 1] + log_entry + b[t, 0]
                start_t = 1
            for t in range(start_t, t_len):
                stay = alpha[t - 1] + model.log_self
                move = np.full(n_s, -np.inf)
                move[1:] = alpha[t - 1, :-1] + model.log_advance[:-1]
                entry_term = alpha[t]  # already seeded for state 0
                alpha[t] = np.logaddexp(np.logaddexp(stay, move) + b[t], entry_term)
            prev_exit = alpha[:, -1] + model.log_advance[-1]
        chain_forward = prev_exit[-1]
        assert decoded.score <= chain_forward + 1e-9

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            viterbi_decode([simple_model()], np.empty((0, 2)))


class TestBaumWelch:
    def test_single_state_single_component_recovers_gaussian(self):
        rng = np.random.default_rng(9)
        true_mean, true_sigma, n = 1.7, 0.8, 4000
        data = rng.normal(true_mean, true_sigma, (n, 2))
        segments = [data[i : i + 40] for i in range(0, n, 40)]
        cfg = TrainConfig(n_states=1, n_components=1, max_iter=10, seed=0)
        model, _ = train_baum_welch(segments, "g", 0, cfg)
        tol = 3 * true_sigma / np.sqrt(n)
        np.testing.assert_allclose(model.states[0].means[0], true_mean, atol=tol)

    def test_loglik_trajectory_monotone(self):
        rng = np.random.default_rng(10)
        segments = [rng.standard_normal((rng.integers(8, 20), 3)) + rng.normal() for _ in range(12)]
        cfg = TrainConfig(n_states=3, n_components=2, max_iter=12, tol=0.0, seed=1)
        _, trajectory = train_baum_welch(segments, "m", 0, cfg)
        diffs = np.diff(trajectory)
        assert np.all(diffs >= -1e-6)

    def test_training_deterministic(self):
        rng = np.random.default_rng(11)
        segments = [rng.standard_normal((12, 3)) for _ in range(6)]
        cfg = TrainConfig(n_states=3, n_components=2, max_iter=5, seed=7)
        m1, t1 = train_baum_welch(segments, "m", 0, cfg)
        m2, t2 = train_baum_welch(segments, "m", 0, cfg)
        assert t1 == t2
        for s1, s2 in zip(m1.states, m2.states):
            np.testing.assert_array_equal(s1.means, s2.means)
            np.testing.assert_array_equal(s1.variances, s2.variances)
            np.testing.assert_array_equal(s1.weights, s2.weights)
        np.testing.assert_array_equal(m1.self_loops, m2.self_loops)

    def test_variance_floor_respected(self):
        rng = np.random.default_rng(12)
        segments = [rng.standard_normal((15, 2)) * [1.0, 1e-4] for _ in range(8)]
        cfg = TrainConfig(n_states=3, n_components=2, max_iter=8, seed=0, var_floor_frac=1e-3)
        model, _ = train_baum_welch(segments, "m", 0, cfg)
        all_frames = np.concatenate(segments)
        floor = np.maximum(1e-3 * all_frames.var(axis=0), 1e-8)
        for st in model.states:
            assert np.all(st.variances >= floor * (1 - 1e-12))

    def test_identical_frames_warns_and_stays_finite(self):
        segments = [np.ones((10, 2)) for _ in range(4)]
        with pytest.warns(UserWarning):
            model, trajectory = train_baum_welch(segments, "flat", 0, TrainConfig(max_iter=3))
        assert np.all(np.isfinite(trajectory))
        assert forward_loglik(model, np.ones((6, 2))) > -np.inf

    def test_empty_and_short_segments_rejected(self):
        with pytest.raises(ValueError):
            train_baum_welch([], "m", 0)
        with pytest.raises(ValueError):
            train_baum_welch([np.zeros((2, 2))], "m", 0, TrainConfig(n_states=3))


class TestInventory:
    def _tiny_inventory(self):
        rng = np.random.default_rng(13)
        inv = ModelInventory()
        cfg = TrainConfig(n_states=3, n_components=2, max_iter=3, seed=0)
        for k in (0, 1):
            for lab, shift in (("knock", 0.0), ("buzz", 3.0), ("silence", -3.0)):
                segs = [rng.standard_normal((10, 2)) + shift for _ in range(4)]
                model, _ = train_baum_welch(segs, lab, k, cfg)
                inv.add(model)
        return inv

    def test_any_pair_scores_any_segment(self):
        inv = self._tiny_inventory()
        rng = np.random.default_rng(14)
        seg = rng.standard_normal((7, 2))
        for k in inv.array_ids:
            for lab in inv.labels:
                assert np.isfinite(forward_loglik(inv.get(k, lab), seg))

    def test_mismatched_class_sets_rejected(self):
        inv = self._tiny_inventory()
        del inv.models[(1, "buzz")]
        with pytest.raises(ValueError):
            inv.validate()

    def test_roundtrip_exact(self, tmp_path):
        inv = self._tiny_inventory()
        path = tmp_path / "models.npz"
        save_inventory(inv, path)
        back = load_inventory(path)
        assert back.labels == inv.labels
        assert back.array_ids == inv.array_ids
        for key, model in inv.models.items():
            other = back.models[key]
            np.testing.assert_array_equal(other.self_loops, model.self_loops)
            for s1, s2 in zip(model.states, other.states):
                np.testing.assert_array_equal(s1.weights, s2.weights)
                np.testing.assert_array_equal(s1.means, s2.means)
                np.testing.assert_array_equal(s1.variances, s2.variances)

    def test_version_guard(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, format_version=np.array([99]), keys=np.array([]))
        with pytest.raises(ValueError):
            load_inventory(path)
