import pytest

from pointcover.episodes import (
    assert_support_only,
    episode_from_json,
    episode_to_json,
    load_episode,
    sample_episode,
    save_episode,
)
from pointcover.errors import CapacityError
from pointcover.geometry import ManifestEntry


def toy_entries(classes=10, per_class=40):
    return [
        ManifestEntry(f"c{c}_{i}.xyz", c)
        for c in range(1, classes + 1)
        for i in range(per_class)
    ]


class TestSampling:
    def test_paper_scale_episode(self):
        ep = sample_episode(toy_entries(10, 40), way=5, shot=10, q_per_class=20, seed=0)
        assert len(ep.support) == 50
        assert len(ep.query) == 100
        assert not (ep.support_ids & ep.query_ids)
        per_class = {}
        for _, cls in ep.support:
            per_class[cls] = per_class.get(cls, 0) + 1
        assert all(count == 10 for count in per_class.values())
        assert len(per_class) == 5

    def test_minimal_episode(self):
        ep = sample_episode(toy_entries(1, 2), way=1, shot=1, q_per_class=1, seed=3)
        assert len(ep.support) == 1 and len(ep.query) == 1

    def test_capacity_error_for_too_few_classes(self):
        with pytest.raises(CapacityError, match="classes"):
            sample_episode(toy_entries(3, 40), way=5, shot=10, q_per_class=20, seed=0)

    def test_capacity_error_for_short_classes(self):
        with pytest.raises(CapacityError):
            sample_episode(toy_entries(5, 10), way=5, shot=10, q_per_class=20, seed=0)

    def test_deterministic_per_seed(self):
        a = sample_episode(toy_entries(), 5, 10, 20, seed=11)
        b = sample_episode(toy_entries(), 5, 10, 20, seed=11)
        assert a == b

    def test_distinct_seeds_differ(self):
        episodes = {sample_episode(toy_entries(), 5, 10, 20, seed=s).support for s in range(20)}
        assert len(episodes) == 20

    def test_class_coverage_over_many_seeds(self):
        entries = toy_entries(10, 40)
        hits = {c: 0 for c in range(1, 11)}
        runs = 1000
        for seed in range(runs):
            ep = sample_episode(entries, 5, 10, 20, seed=seed)
            for cls in ep.classes:
                hits[cls] += 1
        expected = runs * 5 / 10
        for cls, count in hits.items():
            assert abs(count - expected) < 0.2 * expected, (cls, count)

    def test_no_duplicates_within_episode(self):
        ep = sample_episode(toy_entries(), 5, 10, 20, seed=5)
        ids = [cid for cid, _ in ep.support] + [cid for cid, _ in ep.query]
        assert len(ids) == len(set(ids))


class TestSupportGuard:
    def test_accepts_support_subset(self):
        ep = sample_episode(toy_entries(), 5, 10, 20, seed=0)
        assert_support_only(ep, list(ep.support_ids)[:10])

    def test_rejects_query_cloud(self):
        ep = sample_episode(toy_entries(), 5, 10, 20, seed=0)
        leak = next(iter(ep.query_ids))
        with pytest.raises(ValueError, match="outside the support set"):
            assert_support_only(ep, list(ep.support_ids) + [leak])


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        ep = sample_episode(toy_entries(), 5, 10, 20, seed=42)
        assert episode_from_json(episode_to_json(ep)) == ep
        path = tmp_path / "episode.json"
        save_episode(path, ep)
        assert load_episode(path) == ep
