"""Few-shot episode sampling: a support set for training and a disjoint query set.

An episode draws ``way`` classes, then ``shot`` support and ``q_per_class``
query examples per class, all without replacement and deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError
from .geometry import ManifestEntry


@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    q_per_class: int
    seed: int
    support: tuple[tuple[str, int], ...]
    query: tuple[tuple[str, int], ...]

    @property
    def support_ids(self) -> frozenset[str]:
        return frozenset(cid for cid, _ in self.support)

    @property
    def query_ids(self) -> frozenset[str]:
        return frozenset(cid for cid, _ in self.query)

    @property
    def classes(self) -> tuple[int, ...]:
        seen = []
        for _, cls in self.support:
            if cls not in seen:
                seen.append(cls)
        return tuple(seen)


def sample_episode(
    entries: list[ManifestEntry], way: int, shot: int, q_per_class: int, seed: int
) -> Episode:
    """Sample an episode from a labeled manifest.

    Classes are drawn uniformly without replacement among classes that have at
    least ``shot + q_per_class`` examples; raises CapacityError when fewer
    than ``way`` classes qualify.
    """
    if way < 1 or shot < 1 or q_per_class < 0:
        raise ValueError(f"bad episode shape way={way} shot={shot} q_per_class={q_per_class}")
    by_class: dict[int, list[str]] = {}
    for e in entries:
        by_class.setdefault(e.class_label, []).append(e.path)
    need = shot + q_per_class
    eligible = sorted(c for c, ids in by_class.items() if len(ids) >= need)
    if len(eligible) < way:
        raise CapacityError(
            f"need {way} classes with >= {need} examples each; "
            f"only {len(eligible)} of {len(by_class)} classes qualify"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(np.asarray(eligible), size=way, replace=False)
    support: list[tuple[str, int]] = []
    query: list[tuple[str, int]] = []
    for cls in chosen:
        ids = by_class[int(cls)]
        order = rng.permutation(len(ids))
        support += [(ids[i], int(cls)) for i in order[:shot]]
        query += [(ids[i], int(cls)) for i in order[shot : shot + q_per_class]]
    return Episode(
        way=way,
        shot=shot,
        q_per_class=q_per_class,
        seed=seed,
        support=tuple(support),
        query=tuple(query),
    )


def assert_support_only(episode: Episode, cloud_ids) -> None:
    """Reject any cloud id outside the episode's support set.

    Pretraining consumes support clouds only; this is the guard the trainer
    calls before touching pretext data.
    """
    extra = sorted(set(cloud_ids) - episode.support_ids)
    if extra:
        raise ValueError(
            f"pretext data references clouds outside the support set: {extra[:5]}"
            + ("..." if len(extra) > 5 else "")
        )


def episode_to_json(ep: Episode) -> dict:
    return {
        "way": ep.way,
        "shot": ep.shot,
        "q_per_class": ep.q_per_class,
        "seed": ep.seed,
        "support": [{"cloud": cid, "class": cls} for cid, cls in ep.support],
        "query": [{"cloud": cid, "class": cls} for cid, cls in ep.query],
    }


def episode_from_json(data: dict) -> Episode:
    return Episode(
        way=int(data["way"]),
        shot=int(data["shot"]),
        q_per_class=int(data["q_per_class"]),
        seed=int(data["seed"]),
        support=tuple((item["cloud"], int(item["class"])) for item in data["support"]),
        query=tuple((item["cloud"], int(item["class"])) for item in data["query"]),
    )


def save_episode(path, ep: Episode) -> None:
    Path(path).write_text(json.dumps(episode_to_json(ep), indent=2) + "\n")


def load_episode(path) -> Episode:
    return episode_from_json(json.loads(Path(path).read_text()))
