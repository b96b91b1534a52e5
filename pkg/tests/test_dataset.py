import struct
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expressml import dataset as ds
from expressml.dataset import (LabeledMatrix, SplitIndices, SynthSpec, dumps, generate_synthetic,
                               load_dataset, loads, save_dataset, split_quotas, stratified_split)
from expressml.errors import (BadMagic, ChecksumMismatch, ClassTooSmall, ContainerError, DataError,
                              InvalidParams, InvalidSpec, TruncatedFile, VersionMismatch)

from conftest import make_matrix


def quotas_oracle(sizes, fraction):
    """Largest remainder computed with Fractions throughout."""
    f = Fraction(str(fraction))
    exact = [f * s for s in sizes]
    floors = [q.numerator // q.denominator for q in exact]
    total = (f * sum(sizes))
    extra = total.numerator // total.denominator - sum(floors)
    ranked = sorted(range(len(sizes)), key=lambda c: (floors[c] - exact[c], c))
    for c in ranked[:extra]:
        floors[c] += 1
    return floors


def sizes_5629():
    base = [331] * 17  # 5627
    base[0] += 1
    base[5] += 1
    return base


def test_split_5629_rows():
    start = time.perf_counter()
    labels = [f"c{c:02d}" for c, size in enumerate(sizes_5629()) for _ in range(size)]
    matrix = make_matrix(np.zeros((len(labels), 1)), labels)
    split = stratified_split(matrix, 0.75, 1)
    assert matrix.n_rows == 5629
    assert (len(split.train_rows), len(split.test_rows)) == (4221, 1408)
    assert time.perf_counter() - start < 1.0


def test_single_class_of_four():
    assert split_quotas([4], 0.75) == [3]


def test_largest_remainder_hand_example():
    # floors 3 + 2 = 5 of a global 6; remainders 0.75 vs 0.25
    assert split_quotas([5, 3], 0.75) == [4, 2]


def test_decimal_reading_of_fraction():
    assert split_quotas([100], 0.29) == [29]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(2, 400), min_size=1, max_size=20),
       st.sampled_from([0.1, 0.25, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.29, 0.33]))
def test_quotas_match_fraction_oracle(sizes, fraction):
    q = split_quotas(sizes, fraction)
    assert q == quotas_oracle(sizes, fraction)
    exact = [Fraction(str(fraction)) * s for s in sizes]
    assert all(int(e) <= qi <= int(e) + 1 for e, qi in zip(exact, q))
    assert sum(q) == int(Fraction(str(fraction)) * sum(sizes))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(2, 30), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_split_partitions_rows(sizes, seed):
    labels = [f"c{c}" for c, s in enumerate(sizes) for _ in range(s)]
    matrix = make_matrix(np.zeros((len(labels), 1)), labels)
    split = stratified_split(matrix, 0.75, seed)
    train, test = set(split.train_rows.tolist()), set(split.test_rows.tolist())
    assert not train & test
    assert train | test == set(range(len(labels)))
    per_class = np.bincount(matrix.y[split.train_rows], minlength=len(sizes)).tolist()
    assert per_class == split_quotas(sizes, 0.75)


def test_split_deterministic_and_seed_sensitive():
    matrix = make_matrix(np.zeros((40, 1)), ["a"] * 20 + ["b"] * 20)
    a = stratified_split(matrix, 0.75, 3)
    b = stratified_split(matrix, 0.75, 3)
    c = stratified_split(matrix, 0.75, 4)
    np.testing.assert_array_equal(a.train_rows, b.train_rows)
    assert not np.array_equal(a.train_rows, c.train_rows)


def test_class_too_small():
    matrix = make_matrix(np.zeros((3, 1)), ["a", "a", "b"])
    with pytest.raises(ClassTooSmall):
        stratified_split(matrix, 0.75, 1)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_bad_fraction(fraction):
    matrix = make_matrix(np.zeros((4, 1)), ["a", "a", "b", "b"])
    with pytest.raises(InvalidParams):
        stratified_split(matrix, fraction, 1)


def test_split_json_round_trip():
    split = SplitIndices(np.array([0, 2]), np.array([1]), 9, 0.75)
    back = SplitIndices.from_json(split.to_json("abc"))
    np.testing.assert_array_equal(back.train_rows, [0, 2])
    assert back.seed == 9 and back.fraction == 0.75


# --- matrix ---------------------------------------------------------------

def test_matrix_invariants():
    with pytest.raises(DataError):
        make_matrix(np.zeros((2, 2)), ["a"])
    with pytest.raises(DataError):
        make_matrix(np.zeros((1, 2)), ["a"], ["b", "a"])
    with pytest.raises(DataError):
        make_matrix(np.zeros((1, 2)), ["a"], ["a", "a"])
    with pytest.raises(DataError):
        LabeledMatrix(np.zeros((1, 1)), ["a"], ["g"], {"a": 1})


def test_subset_keeps_class_index():
    m = make_matrix(np.arange(12).reshape(4, 3), ["a", "b", "c", "a"])
    sub = m.subset(rows=[0, 3], genes=["g002", "g000"])
    assert sub.classes == ("a", "b", "c")
    assert sub.gene_names == ("g000", "g002")
    np.testing.assert_array_equal(sub.values, [[0, 2], [9, 11]])
    np.testing.assert_array_equal(sub.y, [0, 0])


def test_values_read_only():
    m = make_matrix(np.zeros((2, 2)), ["a", "b"])
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0


# --- container ------------------------------------------------------------

def fixture_3x4():
    return make_matrix(np.arange(12, dtype=np.float32).reshape(3, 4) / 7,
                       ["Lung/Adeno", "Skin/Mel", "Lung/Adeno"], ["a", "b", "c", "d"])


def test_round_trip(tmp_path):
    m = fixture_3x4()
    path = tmp_path / "d.exml"
    save_dataset(m, path)
    back = load_dataset(path)
    assert back.values.tobytes() == m.values.tobytes()
    assert back.labels == m.labels and back.gene_names == m.gene_names
    assert back.class_index == m.class_index
    assert back.fingerprint() == m.fingerprint()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_round_trip_property(n, m, data):
    vals = data.draw(st.lists(st.floats(width=32, allow_nan=False), min_size=n * m, max_size=n * m))
    labels = data.draw(st.lists(st.sampled_from(["x/ü", "y/β", "z/z"]), min_size=n, max_size=n))
    matrix = make_matrix(np.array(vals, dtype=np.float32).reshape(n, m), labels)
    back = loads(dumps(matrix))
    assert back.values.tobytes() == matrix.values.tobytes()
    assert back.labels == matrix.labels


def test_bad_magic():
    data = bytearray(dumps(fixture_3x4()))
    data[0:4] = b"NOPE"
    with pytest.raises(BadMagic):
        loads(bytes(data))


@pytest.mark.parametrize("cut", [2, 10, 40, -5, -1])
def test_truncated(cut):
    data = dumps(fixture_3x4())
    with pytest.raises(TruncatedFile):
        loads(data[:cut])


def test_checksum_mismatch():
    data = bytearray(dumps(fixture_3x4()))
    data[-10] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        loads(bytes(data))


def test_version_mismatch():
    data = bytearray(dumps(fixture_3x4()))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(VersionMismatch):
        loads(bytes(data))


def test_trailing_bytes():
    with pytest.raises(ContainerError):
        loads(dumps(fixture_3x4()) + b"\0")


# --- synthetic ------------------------------------------------------------

def test_two_class_single_gene_signs():
    m, planted = generate_synthetic(SynthSpec(classes=2, samples_per_class=2, genes=1,
                                              informative_genes=1, effect_size=10, noise_sd=0.1))
    assert planted == list(m.gene_names)
    col = m.values[:, 0]
    a, b = col[m.y == 0], col[m.y == 1]
    assert (np.all(a > 0) and np.all(b < 0)) or (np.all(a < 0) and np.all(b > 0))
    assert abs(col.mean()) < 1e-6 and abs(col.std() - 1) < 1e-5


def test_synthetic_deterministic():
    spec = SynthSpec(classes=3, samples_per_class=5, genes=30, informative_genes=4, seed=11)
    a, pa = generate_synthetic(spec)
    b, pb = generate_synthetic(spec)
    assert a.values.tobytes() == b.values.tobytes() and pa == pb
    c, _ = generate_synthetic(SynthSpec(classes=3, samples_per_class=5, genes=30,
                                        informative_genes=4, seed=12))
    assert a.values.tobytes() != c.values.tobytes()


def test_synthetic_shape_and_labels():
    m, planted = generate_synthetic(SynthSpec())
    assert m.values.shape == (680, 2000)
    assert m.n_classes == 17 and len(planted) == 50 and len(set(planted)) == 50
    assert np.bincount(m.y).tolist() == [40] * 17


@pytest.mark.parametrize("kwargs", [dict(informative_genes=3, genes=2), dict(samples_per_class=1),
                                    dict(effect_size=0.0), dict(classes=0), dict(noise_sd=-1)])
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidSpec):
        generate_synthetic(SynthSpec(**kwargs))


def test_no_signal_gives_chance_accuracy():
    from expressml.analysis import evaluate
    from expressml.neighbors import train_knn

    accs = []
    for seed in range(1, 6):
        m, _ = generate_synthetic(SynthSpec(classes=4, samples_per_class=30, genes=40,
                                            informative_genes=0, seed=seed))
        split = stratified_split(m, 0.75, seed)
        model = train_knn(m.subset(rows=split.train_rows), k=5)
        accs.append(evaluate(model, m.subset(rows=split.test_rows)).overall_accuracy)
    assert abs(np.mean(accs) - 0.25) < 0.1


def test_stream_keys_are_distinct():
    assert len({0x5B117, 0x5E7}) == 2
    assert ds.MAGIC == b"EXML"
