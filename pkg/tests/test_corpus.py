"""Synthetic corpus tests: synthesis, frontend stacking, domain sampling,
long-form concatenation, and the on-disk format."""

import json

import numpy as np
import pytest

from rnntlab.corpus import (
    DomainSpec,
    Utterance,
    build_longform_set,
    default_domains,
    frontend_stack,
    load_corpus,
    make_minibatch,
    read_feature_file,
    sample_domain,
    save_corpus,
    synthesize_utterance,
    with_subdomains,
    write_feature_file,
)


def clean_domain(**overrides) -> DomainSpec:
    base = dict(
        name="clean",
        prototypes=np.arange(8.0).reshape(4, 2),
        duration_min=3,
        duration_max=3,
        noise_std=0.0,
        length_min=1,
        length_max=1,
        silence_probability=0.0,
        stack=1,
        hop=1,
    )
    base.update(overrides)
    return DomainSpec(**base)


class TestFrontend:
    def test_stack4_hop3_counts_and_padding(self):
        raw = np.arange(20.0).reshape(10, 2)
        out = frontend_stack(raw, stack=4, hop=3)
        assert out.shape == (4, 8)
        np.testing.assert_array_equal(out[0], raw[0:4].reshape(-1))
        np.testing.assert_array_equal(out[1], raw[3:7].reshape(-1))
        np.testing.assert_array_equal(out[3, :2], raw[9])
        np.testing.assert_array_equal(out[3, 2:], np.zeros(6))

    def test_stack1_hop1_is_identity(self):
        raw = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_array_equal(frontend_stack(raw, 1, 1), raw)

    def test_empty_input_gives_empty_output(self):
        out = frontend_stack(np.zeros((0, 3)), stack=4, hop=3)
        assert out.shape == (0, 12)

    def test_validation(self):
        with pytest.raises(ValueError, match="stack and hop"):
            frontend_stack(np.zeros((3, 2)), 0, 1)
        with pytest.raises(ValueError, match="2-D"):
            frontend_stack(np.zeros(3), 1, 1)


class TestSynthesis:
    def test_noiseless_single_token_repeats_prototype(self):
        domain = clean_domain()
        utt = synthesize_utterance(domain, rng=0)
        assert len(utt.tokens) == 1
        proto = domain.prototypes[utt.tokens[0]]
        assert utt.features.shape == (3, 2)
        for row in utt.features:
            np.testing.assert_array_equal(row, proto)
        assert utt.raw_frame_count == 3

    def test_affine_channel_applied(self):
        domain = clean_domain(gain=np.array([2.0, 0.5]), bias=np.array([1.0, -1.0]))
        utt = synthesize_utterance(domain, rng=0)
        proto = domain.prototypes[utt.tokens[0]]
        np.testing.assert_allclose(
            utt.features[0], proto * np.array([2.0, 0.5]) + np.array([1.0, -1.0])
        )

    def test_seeded_determinism_bitwise(self):
        domain = default_domains(seed=3)[1]
        a = synthesize_utterance(domain, rng=np.random.default_rng(42))
        b = synthesize_utterance(domain, rng=np.random.default_rng(42))
        assert a.id == b.id
        assert a.tokens == b.tokens
        assert np.array_equal(a.features, b.features)

    def test_silence_inserted_between_tokens(self):
        domain = clean_domain(
            length_min=2,
            length_max=2,
            silence_probability=1.0,
            silence_prototype=np.array([100.0, 100.0]),
        )
        utt = synthesize_utterance(domain, rng=1)
        # duration 3 per token plus one silence gap of 3 frames
        assert utt.raw_frame_count == 9
        assert np.any(np.all(utt.features == 100.0, axis=1))

    def test_token_count_within_configured_bounds_and_mean(self):
        domain = default_domains(seed=0)[0]
        rng = np.random.default_rng(5)
        counts = [len(synthesize_utterance(domain, rng).tokens) for _ in range(400)]
        assert min(counts) >= domain.length_min
        assert max(counts) <= domain.length_max
        target_mean = (domain.length_min + domain.length_max) / 2
        assert abs(np.mean(counts) - target_mean) < 0.5

    def test_domains_with_disjoint_biases_are_linearly_separable(self):
        from sklearn.linear_model import LogisticRegression

        protos = np.random.default_rng(2).normal(size=(4, 2))
        a = clean_domain(prototypes=protos, length_min=3, length_max=6)
        b = clean_domain(
            name="shifted",
            prototypes=protos,
            length_min=3,
            length_max=6,
            bias=np.array([4.0, 4.0]),
        )
        rng = np.random.default_rng(3)
        means, labels = [], []
        for domain, label in ((a, 0), (b, 1)):
            for _ in range(20):
                utt = synthesize_utterance(domain, rng)
                means.append(utt.features.mean(axis=0))
                labels.append(label)
        clf = LogisticRegression().fit(means, labels)
        assert clf.score(means, labels) == 1.0

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="durations"):
            clean_domain(duration_min=0)
        with pytest.raises(ValueError, match="lengths"):
            clean_domain(length_min=5, length_max=2)
        with pytest.raises(ValueError, match="noise_std"):
            clean_domain(noise_std=-0.1)
        with pytest.raises(ValueError, match="gain"):
            clean_domain(gain=np.zeros(3))


class TestSampling:
    def test_uniform_domain(self):
        domains = default_domains(seed=0)
        rng = np.random.default_rng(0)
        counts = {d.name: 0 for d in domains}
        for _ in range(10_000):
            counts[sample_domain("uniform_domain", domains, rng).name] += 1
        for name in counts:
            assert abs(counts[name] / 10_000 - 0.5) < 0.02

    def test_count_weighted_table_proportions(self):
        # Weights 56/38/4/190 normalize to 0.1944/0.1319/0.0139/0.6597.
        protos = np.zeros((2, 2))
        domains = [
            clean_domain(name=f"d{i}", prototypes=protos, weight_hours=w)
            for i, w in enumerate([56.0, 38.0, 4.0, 190.0])
        ]
        rng = np.random.default_rng(11)
        counts = np.zeros(4)
        n = 100_000
        for _ in range(n):
            name = sample_domain("count_weighted", domains, rng).name
            counts[int(name[1])] += 1
        freq = counts / n
        expected = np.array([0.1944, 0.1319, 0.0139, 0.6597])
        np.testing.assert_allclose(freq, expected, atol=0.01)

    def test_uniform_subdomain_flattens(self):
        base = clean_domain(name="parent")
        parent = with_subdomains(base, [{"name": "x"}, {"name": "y"}, {"name": "z"}])
        plain = clean_domain(name="solo")
        rng = np.random.default_rng(4)
        counts: dict[str, int] = {}
        for _ in range(20_000):
            picked = sample_domain("uniform_subdomain", [parent, plain], rng)
            counts[picked.name] = counts.get(picked.name, 0) + 1
        assert set(counts) == {"parent/x", "parent/y", "parent/z", "solo"}
        for name in counts:
            assert abs(counts[name] / 20_000 - 0.25) < 0.02

    def test_zero_weights_rejected(self):
        domains = [clean_domain(weight_hours=0.0)]
        with pytest.raises(ValueError, match="positive total weight"):
            sample_domain("count_weighted", domains, np.random.default_rng(0))
        with pytest.raises(ValueError, match="strategy"):
            sample_domain("round_robin", domains, np.random.default_rng(0))
        with pytest.raises(ValueError, match="non-empty"):
            sample_domain("uniform_domain", [], np.random.default_rng(0))

    def test_minibatch_single_domain_and_reproducible(self):
        domains = [default_domains(seed=0)[0]]
        batch = make_minibatch("uniform_domain", domains, 8, np.random.default_rng(9))
        assert len(batch) == 8
        assert all(u.domain == "short_clean" for u in batch)
        again = make_minibatch("uniform_domain", domains, 8, np.random.default_rng(9))
        for a, b in zip(batch, again):
            assert a.id == b.id and np.array_equal(a.features, b.features)


class TestLongform:
    def make_sources(self, n):
        domain = default_domains(seed=1)[0]
        rng = np.random.default_rng(7)
        return [synthesize_utterance(domain, rng) for _ in range(n)]

    def test_concat_one_is_identity(self):
        sources = self.make_sources(3)
        out = build_longform_set(sources, concat_count=1, silence_frames=0)
        assert len(out) == 3
        for a, b in zip(out, sources):
            assert a.tokens == b.tokens
            assert np.array_equal(a.features, b.features)

    def test_concat_five_token_and_duration_identity(self):
        sources = self.make_sources(10)
        out = build_longform_set(sources, concat_count=5, silence_frames=4)
        assert len(out) == 2
        for i, utt in enumerate(out):
            group = sources[5 * i : 5 * i + 5]
            want_tokens = [t for piece in group for t in piece.tokens]
            assert utt.tokens == want_tokens
            want_frames = sum(p.features.shape[0] for p in group) + 4 * 4
            assert utt.features.shape[0] == want_frames
            assert utt.id == "+".join(p.id for p in group)

    def test_trailing_partial_group_dropped_and_empty_source(self):
        sources = self.make_sources(7)
        out = build_longform_set(sources, concat_count=3, silence_frames=0)
        assert len(out) == 2
        assert build_longform_set([], concat_count=4, silence_frames=2) == []


class TestPersistence:
    def test_feature_file_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(9, 5))
        path = tmp_path / "x.bin"
        write_feature_file(path, features)
        assert np.array_equal(read_feature_file(path), features)
        raw = path.read_bytes()
        assert len(raw) == 8 + 9 * 5 * 8
        assert int.from_bytes(raw[0:4], "little") == 9
        assert int.from_bytes(raw[4:8], "little") == 5

    def test_corpus_round_trip(self, tmp_path):
        domains = default_domains(seed=2)
        rng = np.random.default_rng(1)
        utts = make_minibatch("uniform_domain", domains, 6, rng)
        manifest = save_corpus(tmp_path / "corpus", utts)
        loaded = load_corpus(manifest)
        assert len(loaded) == 6
        for a, b in zip(loaded, utts):
            assert a.id == b.id
            assert a.domain == b.domain
            assert a.tokens == b.tokens
            assert np.array_equal(a.features, b.features)
        also = load_corpus(tmp_path / "corpus")
        assert [u.id for u in also] == [u.id for u in utts]

    def test_manifest_is_json_lines_with_required_fields(self, tmp_path):
        utts = make_minibatch(
            "uniform_domain", default_domains(seed=0), 2, np.random.default_rng(2)
        )
        manifest = save_corpus(tmp_path / "c", utts)
        lines = manifest.read_text().splitlines()
        assert len(lines) == 2
        record = json.loads(lines[0])
        assert set(record) == {"id", "domain", "token_ids", "feature_file", "frame_count"}

    def test_corrupt_files_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x01\x00")
        with pytest.raises(ValueError, match="too short"):
            read_feature_file(path)
        write_feature_file(path, np.zeros((2, 3)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="does not match header"):
            read_feature_file(path)
        cdir = tmp_path / "c2"
        save_corpus(cdir, [])
        (cdir / "manifest.jsonl").write_text('{"id": "a"}\n')
        with pytest.raises(ValueError, match="missing field"):
            load_corpus(cdir)
        (cdir / "manifest.jsonl").write_text("{not json}\n")
        with pytest.raises(ValueError, match="invalid JSON"):
            load_corpus(cdir)
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "missing")
