import json

import numpy as np
import pytest

from credweak.corpus import Article, Dataset
from credweak.label_model import VoteMatrix

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


def make_articles(labels, prefix="a"):
    return [
        Article(
            id=f"{prefix}{i}",
            title=f"Title {i}",
            body=f"Body text number {i} with a few extra words.",
            label=int(lab) if lab is not None else None,
        )
        for i, lab in enumerate(labels)
    ]


def planted_votes(rng, m, accs, props):
    """Ternary votes from abstaining labeling functions with planted quality."""
    n = len(accs)
    y = rng.integers(0, 2, size=m)
    votes = np.full((m, n), -1, dtype=np.int8)
    for j in range(n):
        active = rng.random(m) < props[j]
        correct = rng.random(m) < accs[j]
        votes[active & correct, j] = y[active & correct]
        votes[active & ~correct, j] = 1 - y[active & ~correct]
    return votes, y


def vote_matrix(votes, name="synthetic"):
    m, n = votes.shape
    return VoteMatrix(
        dataset=name,
        article_ids=[f"a{i}" for i in range(m)],
        signal_ids=[f"s{j}" for j in range(n)],
        votes=votes,
    )


@pytest.fixture
def small_dataset():
    return Dataset(name="small", articles=make_articles([1, 0, 1, 0, 1, 0]), domain_tag="other")


@pytest.fixture
def jsonl_file(tmp_path):
    def write(records, name="data.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        return path

    return write
