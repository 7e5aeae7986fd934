import numpy as np
import pytest

from rattlab.linalg import Rng
from rattlab.model import ModelDims, init_params


def random_params(dims, seed=0, scale=None):
    """Model with weights spread wider than the default init, so gradients are not tiny."""
    p = init_params(dims, Rng(seed))
    if scale is not None:
        p = p.map(lambda k, v: v * scale)
    return p


def random_captions(rng: np.random.Generator, n, length, vocab, low=2):
    caps = []
    for _ in range(n):
        words = rng.integers(low, vocab, size=length - 2).tolist()
        caps.append([0] + words + [1])
    return caps


@pytest.fixture
def small_dims():
    return ModelDims(d_feat=5, d_emb=4, d_hidden=6, vocab_size=10)


@pytest.fixture
def small_params(small_dims):
    return random_params(small_dims, seed=3, scale=5.0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def make_tasks(n_tasks=2, per_cat=40, seed=1, **spec_kw):
    from rattlab.harness import build_tasks
    from rattlab.splitter import SyntheticSpec, TaskDef, generate_synthetic, partition, split_disjoint

    spec = SyntheticSpec(num_categories=n_tasks, images_per_category=per_cat, **spec_kw)
    images, cats = generate_synthetic(spec, seed)
    defs = [TaskDef(k, cats[k], frozenset({k})) for k in range(n_tasks)]
    split = partition(split_disjoint(images, defs), (0.6, 0.2, 0.2), seed=seed)
    return build_tasks(images, split)


@pytest.fixture(scope="session")
def tiny_tasks():
    return make_tasks(2, 30, vocab_per_category=12, pool_size=8)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
