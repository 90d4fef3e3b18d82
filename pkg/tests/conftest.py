import pytest

from qecontrast.corpus import (
    QAInstance,
    QuestionType,
    SynthConfig,
    Vocabulary,
    assemble_sequence,
    generate_synthetic,
)
from qecontrast.encoder import EncoderConfig, encode, init_params


@pytest.fixture
def small_dataset():
    return generate_synthetic(SynthConfig(20, 4, 2, 200, 3, 0.6, seed=7))


@pytest.fixture
def tiny_instance():
    types = [QuestionType(0, "yes"), QuestionType(1, "no")]
    return QAInstance(
        id="t0",
        question=["which", "color"],
        sentences=[["red", "apple"], ["blue", "sky", "above"], ["green", "leaf"]],
        evidence=frozenset({1}),
        qtype=types[0],
    )


@pytest.fixture
def encoded_instance(small_dataset):
    vocab = Vocabulary.from_instances(small_dataset)
    inst = small_dataset[0]
    seq = assemble_sequence(inst, vocab)
    cfg = EncoderConfig(hidden_dim=8, layers=1, max_len=128, seed=3)
    params = init_params(cfg, len(vocab))
    return inst, seq, params, encode(seq, params)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(floor, abs(a) + abs(b))


def fd_check(f, arr, analytic, coords, step=1e-5):
    """Central finite differences on selected coordinates of one array."""
    worst = 0.0
    for ij in coords:
        orig = arr[ij]
        arr[ij] = orig + step
        fp = f()
        arr[ij] = orig - step
        fm = f()
        arr[ij] = orig
        fd = (fp - fm) / (2 * step)
        worst = max(worst, rel_err(fd, analytic[ij]))
    return worst


def random_coords(rng, shape, count):
    return [tuple(int(rng.integers(s)) for s in shape) for _ in range(count)]
