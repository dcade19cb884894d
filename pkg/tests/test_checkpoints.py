import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinasr.checkpoints import (
    CheckpointError,
    CheckpointMeta,
    TensorFile,
    average_checkpoints,
    read_checkpoint_metas,
    read_tensor_file,
    select_top_checkpoints,
    top_k_average,
    write_tensor_file,
)


def _tf(value, shape=(2, 3)):
    return TensorFile({"w": np.full(shape, value, np.float32), "b": np.full(shape[-1:], value, np.float32)})


def test_selection_example():
    metas = [CheckpointMeta("a", 1000, 0.5), CheckpointMeta("b", 2000, 0.3), CheckpointMeta("c", 3000, 0.4)]
    assert [m.path for m in select_top_checkpoints(metas, 2)] == ["b", "c"]
    assert [m.path for m in select_top_checkpoints(metas, 10)] == ["b", "c", "a"]


def test_selection_tie_prefers_later_step():
    metas = [CheckpointMeta("early", 2000, 0.3), CheckpointMeta("late", 4000, 0.3), CheckpointMeta("worse", 5000, 0.9)]
    assert [m.path for m in select_top_checkpoints(metas, 2)] == ["late", "early"]


def test_selection_errors():
    with pytest.raises(CheckpointError):
        select_top_checkpoints([], 1)
    with pytest.raises(CheckpointError):
        select_top_checkpoints([CheckpointMeta("a", 1, 0.1)], 0)
    with pytest.raises(CheckpointError, match="unique"):
        select_top_checkpoints([CheckpointMeta("a", 1, 0.1), CheckpointMeta("a", 2, 0.2)], 1)
    with pytest.raises(CheckpointError, match="finite"):
        CheckpointMeta("a", 1, float("nan"))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.floats(0, 10, allow_nan=False)), min_size=1, max_size=30, unique_by=lambda t: t[0]), st.integers(1, 40))
def test_selection_property(rows, keep):
    metas = [CheckpointMeta(f"ck{s}", s, loss) for s, loss in rows]
    kept = select_top_checkpoints(metas, keep)
    assert len(kept) == min(keep, len(metas))
    worst_kept = max((m.val_loss for m in kept))
    assert all(m.val_loss >= worst_kept for m in metas if m not in kept)
    keys = [(m.val_loss, -m.step) for m in kept]
    assert keys == sorted(keys)


def test_identity_and_midpoint():
    one = average_checkpoints([_tf(1.0)])
    assert np.array_equal(one.entries["w"], _tf(1.0).entries["w"])
    mid = average_checkpoints([_tf(1.0), _tf(3.0)])
    assert np.array_equal(mid.entries["w"], np.full((2, 3), 2.0, np.float32))
    assert list(mid.entries) == ["b", "w"]


def test_ten_file_mean_oracle(tmp_path):
    rng = np.random.default_rng(3)
    arrays = [rng.normal(size=(4, 5)).astype(np.float32) for _ in range(10)]
    paths = [write_tensor_file(TensorFile({"layer.weight": a}), tmp_path / f"c{i}.tf") for i, a in enumerate(arrays)]
    out = average_checkpoints(paths, out=tmp_path / "avg.tf")
    expected = [[sum(float(a[i, j]) for a in arrays) / 10 for j in range(5)] for i in range(4)]
    assert np.max(np.abs(out.entries["layer.weight"] - np.array(expected))) <= 1e-6
    back = read_tensor_file(tmp_path / "avg.tf")
    assert np.array_equal(back.entries["layer.weight"], out.entries["layer.weight"])
    assert back.sources == [str(p) for p in paths]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_permutation_invariance_property(k, seed):
    rng = np.random.default_rng(seed)
    tfs = [TensorFile({"x": rng.normal(scale=100, size=7).astype(np.float32)}) for _ in range(k)]
    a = average_checkpoints(tfs).entries["x"]
    b = average_checkpoints([tfs[i] for i in rng.permutation(k)]).entries["x"]
    assert np.array_equal(a, b)
    stack = np.stack([t.entries["x"] for t in tfs])
    assert np.all(a >= stack.min(axis=0)) and np.all(a <= stack.max(axis=0))


def test_mismatch_names_entry():
    with pytest.raises(CheckpointError, match="'b'"):
        average_checkpoints([_tf(1.0), TensorFile({"w": np.ones((2, 3))})])
    with pytest.raises(CheckpointError, match="'w'.*shape"):
        average_checkpoints([_tf(1.0), _tf(1.0, (3, 3))])
    with pytest.raises(CheckpointError):
        average_checkpoints([])


def test_tensor_file_round_trip(tmp_path):
    tf = TensorFile({"enc.0.w": np.arange(24, dtype=np.float32).reshape(2, 3, 4), "s": np.array([np.pi])}, ["x.tf"])
    back = read_tensor_file(write_tensor_file(tf, tmp_path / "t.tf"))
    assert back.sources == ["x.tf"] and list(back.entries) == ["enc.0.w", "s"]
    assert np.array_equal(back.entries["enc.0.w"], tf.entries["enc.0.w"])
    assert back.entries["s"].dtype == np.float32 and back.entries["s"][0] == np.float32(np.pi)


def test_corrupt_files(tmp_path):
    good = write_tensor_file(_tf(2.0), tmp_path / "g.tf").read_bytes()
    cases = {
        "magic.tf": b"NOTATENSOR\n",
        "noend.tf": b"TENSORFILE 1\nentry w 2\n",
        "truncated.tf": good[:-4],
        "trailing.tf": good + b"\0",
        "header.tf": b"TENSORFILE 1\nbogus line\nEND\n",
    }
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(CheckpointError, match=name):
            read_tensor_file(tmp_path / name)
    with pytest.raises(CheckpointError):
        TensorFile({"bad name": np.ones(2)})
    with pytest.raises(CheckpointError):
        TensorFile({"scalar": np.float32(1.0)})


def test_metas_csv_and_top_k(tmp_path):
    lines = ["path,step,val_loss"]
    for i in range(1, 31):
        write_tensor_file(_tf(float(i)), tmp_path / f"ck{i}.tf")
        lines.append(f"ck{i}.tf,{i * 100},{1.0 / i}")
    (tmp_path / "metas.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    metas = read_checkpoint_metas(tmp_path / "metas.csv")
    assert metas[0].path == str(tmp_path / "ck1.tf") and metas[0].step == 100
    out = top_k_average(metas, retain=20, average=10, out=tmp_path / "avg.tf")
    assert np.allclose(out.entries["w"], np.mean(np.arange(21, 31)), atol=1e-6)
    assert sorted(out.sources) == sorted(str(tmp_path / f"ck{i}.tf") for i in range(21, 31))
