import numpy as np
import pytest

from rattlab.checkpoint import load_checkpoint, save_checkpoint
from rattlab.errors import TaskError, VocabularyError
from rattlab.linalg import Rng
from rattlab.model import FIELDS, ModelDims, greedy_decode
from rattlab.ratt import TaskEmbeddings, compute_masks
from rattlab.vocab import END, START, Vocabulary

from conftest import random_params


def test_sentinels_and_stable_ids():
    v = Vocabulary(["cat", "dog"])
    assert v.words[:2] == [START, END] and v.index["cat"] == 2
    v.register(["eel"])
    assert v.index["cat"] == 2 and v.index["eel"] == 4 and len(v) == 5


def test_register_duplicates_rejected():
    v = Vocabulary(["cat"])
    with pytest.raises(VocabularyError):
        v.register(["cat"])
    with pytest.raises(VocabularyError):
        v.register(["x", "x"])


def test_new_words_sorted_unique():
    v = Vocabulary(["b"])
    assert v.new_words(["d", "a", "b", "d"]) == ["a", "d"]


def test_membership_and_encode():
    v = Vocabulary(["a", "b", "c"])
    v.set_task_words(0, ["a", "c"])
    assert v.membership(0).tolist() == [True, True, True, False, True]
    assert v.membership(0, size=7).shape == (7,)
    assert v.encode(["a", "c"]) == [0, 2, 4, 1]
    assert v.decode([2, 3]) == ["a", "b"]
    with pytest.raises(VocabularyError):
        v.encode(["zz"])
    with pytest.raises(TaskError):
        v.membership(3)
    with pytest.raises(VocabularyError):
        v.set_task_words(1, ["nope"])


def test_vocab_json_round_trip():
    v = Vocabulary(["a", "b"])
    v.set_task_words(0, ["b"])
    w = Vocabulary.from_json(v.to_json())
    assert w.words == v.words and w.tasks == v.tasks


def test_checkpoint_round_trip(tmp_path):
    dims = ModelDims(4, 3, 5, 6)
    p = random_params(dims, 7)
    v = Vocabulary(["w0", "w1", "w2", "w3"])
    v.set_task_words(0, ["w0", "w2"])
    emb = TaskEmbeddings.init(3, 5, 2, Rng(1))
    masks = {0: compute_masks(emb, 0, 400.0, v.membership(0))}
    rng = Rng(3)
    rng.random(5)
    save_checkpoint(tmp_path / "c.npz", p, v, rng.state(), emb, masks, {"task": 0})
    c = load_checkpoint(tmp_path / "c.npz")
    assert c["params"].equal(p) and c["vocab"].words == v.words and c["meta"] == {"task": 0}
    assert np.array_equal(c["embeddings"].A_h, emb.A_h)
    m = c["masks"][0]
    assert np.array_equal(m.a_x, masks[0].a_x) and np.array_equal(m.a_s, masks[0].a_s) and m.s == 400.0
    assert np.array_equal(Rng.from_state(c["rng"]).random(3), rng.random(3))
    sup = v.membership(0)
    feats = np.linspace(0, 1, 4)
    assert greedy_decode(feats, c["params"], sup, 5) == greedy_decode(feats, p, sup, 5)


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", header=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
