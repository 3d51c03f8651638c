import numpy as np
import pytest

from fatiguemotion.errors import (
    DataFormatError,
    DegenerateChannelError,
    ParameterError,
    ShapeError,
    SplitError,
)
from fatiguemotion.sequences import (
    JointId,
    MotionSequence,
    NormalizationParams,
    TorqueSequence,
    denormalize,
    fit_normalizer,
    joints_from_names,
    load_sequence,
    normalize,
    save_sequence,
    split_train_test,
    torque_to_activation,
)


def write(path, text):
    path.write_text(text)
    return path


WELL_FORMED = "# dt=0.01\nshoulder,elbow\n0.1,0.2\n0.3,0.4\n0.5,0.6\n"


def make_seq(frames, names=("a", "b"), dt=0.01, **kw):
    return MotionSequence(joints_from_names(names), dt, np.asarray(frames, dtype=float), **kw)


class TestLoadSave:
    def test_well_formed(self, tmp_path):
        seq = load_sequence(write(tmp_path / "m.csv", WELL_FORMED), kind="angle")
        assert seq.n_frames == 3
        assert seq.n_joints == 2
        assert seq.dt == 0.01
        assert seq.joint_names == ("shoulder", "elbow")
        assert isinstance(seq, MotionSequence) and not isinstance(seq, TorqueSequence)

    def test_torque_kind(self, tmp_path):
        seq = load_sequence(write(tmp_path / "t.csv", WELL_FORMED), kind="torque")
        assert isinstance(seq, TorqueSequence)

    def test_column_order_preserved(self, tmp_path):
        text = "# dt=0.5\nzeta,alpha,mid\n1,2,3\n4,5,6\n"
        seq = load_sequence(write(tmp_path / "m.csv", text))
        assert seq.joint_names == ("zeta", "alpha", "mid")
        assert seq.frames[0].tolist() == [1.0, 2.0, 3.0]

    def test_ragged_row(self, tmp_path):
        text = "# dt=0.01\na,b\n1,2\n3\n5,6\n"
        with pytest.raises(DataFormatError, match="row 4"):
            load_sequence(write(tmp_path / "m.csv", text))

    def test_non_numeric_cell(self, tmp_path):
        text = "# dt=0.01\na,b\n1,2\n3,oops\n"
        with pytest.raises(DataFormatError, match="row 4, column 2"):
            load_sequence(write(tmp_path / "m.csv", text))

    def test_bad_dt(self, tmp_path):
        with pytest.raises(DataFormatError, match="dt"):
            load_sequence(write(tmp_path / "m.csv", "# dt=-1\na,b\n1,2\n3,4\n"))
        with pytest.raises(DataFormatError):
            load_sequence(write(tmp_path / "m.csv", "nope\na,b\n1,2\n3,4\n"))

    def test_round_trip(self, tmp_path):
        first = tmp_path / "first.csv"
        rng = np.random.default_rng(3)
        seq = make_seq(rng.normal(size=(5, 2)))
        save_sequence(seq, first)
        loaded = load_sequence(first)
        assert loaded.dt == seq.dt
        np.testing.assert_array_equal(loaded.frames, seq.frames)
        second = tmp_path / "second.csv"
        save_sequence(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_kind(self, tmp_path):
        with pytest.raises(ParameterError):
            load_sequence(write(tmp_path / "m.csv", WELL_FORMED), kind="velocity")


class TestSequenceInvariants:
    def test_too_short(self):
        with pytest.raises(ShapeError):
            make_seq([[1.0, 2.0]])

    def test_duplicate_names(self):
        with pytest.raises(ParameterError):
            make_seq([[1, 2], [3, 4]], names=("a", "a"))

    def test_joint_index_positions(self):
        with pytest.raises(ParameterError):
            MotionSequence((JointId("a", 1), JointId("b", 0)), 0.1, np.zeros((2, 2)))

    def test_normalized_range_enforced(self):
        with pytest.raises(ParameterError):
            make_seq([[0.0, 0.5], [1.5, 1.0]], normalized=True)

    def test_frames_read_only(self):
        seq = make_seq([[1, 2], [3, 4]])
        with pytest.raises(ValueError):
            seq.frames[0, 0] = 9.0


class TestNormalization:
    def test_linear_map(self):
        seq = make_seq([[2.0, 1.0], [4.0, 2.0], [6.0, 3.0]])
        params = fit_normalizer(seq)
        normed = normalize(seq, params)
        np.testing.assert_allclose(normed.frames[:, 0], [0.0, 0.5, 1.0])
        assert normed.normalized

    def test_inverse_pair(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            seq = make_seq(rng.normal(scale=rng.uniform(0.1, 50), size=(12, 2)))
            params = fit_normalizer(seq)
            back = denormalize(normalize(seq, params), params)
            np.testing.assert_allclose(back.frames, seq.frames, rtol=1e-12, atol=0)

    def test_degenerate_channel(self):
        seq = make_seq([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
        with pytest.raises(DegenerateChannelError, match="'a'"):
            fit_normalizer(seq)

    def test_joint_mismatch(self):
        seq = make_seq([[1, 2], [3, 4]])
        params = NormalizationParams(("x", "y"), np.zeros(2), np.ones(2))
        with pytest.raises(ShapeError):
            normalize(seq, params)

    def test_fit_over_multiple_sequences(self):
        a = make_seq([[0.0, 0.0], [1.0, 1.0]])
        b = make_seq([[2.0, -1.0], [3.0, 0.5]])
        params = fit_normalizer([a, b])
        np.testing.assert_array_equal(params.lo, [0.0, -1.0])
        np.testing.assert_array_equal(params.hi, [3.0, 1.0])

    def test_json_round_trip(self, tmp_path):
        params = NormalizationParams(("a", "b"), np.array([-1.0, 2.0]), np.array([1.5, 4.0]))
        params.save(tmp_path / "norm.json")
        loaded = NormalizationParams.load(tmp_path / "norm.json")
        assert loaded.joints == params.joints
        np.testing.assert_array_equal(loaded.lo, params.lo)
        np.testing.assert_array_equal(loaded.hi, params.hi)


class TestActivation:
    def test_examples(self):
        assert torque_to_activation(0.0, 50.0) == 0.0
        assert torque_to_activation(-25.0, 50.0) == 50.0
        assert torque_to_activation(80.0, 50.0) == 100.0

    def test_domain(self):
        with pytest.raises(ParameterError):
            torque_to_activation(1.0, 0.0)
        with pytest.raises(ParameterError):
            torque_to_activation(1.0, -2.0)

    def test_range_and_evenness(self):
        rng = np.random.default_rng(7)
        tau = rng.normal(scale=100, size=500)
        act = torque_to_activation(tau, 40.0)
        assert np.all(act >= 0) and np.all(act <= 100)
        np.testing.assert_array_equal(act, torque_to_activation(-tau, 40.0))


class TestSplit:
    def make_pool(self, n):
        rng = np.random.default_rng(0)
        return [make_seq(rng.normal(size=(4, 2))) for _ in range(n)]

    def test_sizes_and_determinism(self):
        pool = self.make_pool(10)
        train1, test1 = split_train_test(pool, 0.8, seed=7)
        train2, test2 = split_train_test(pool, 0.8, seed=7)
        assert len(train1) == 8 and len(test1) == 2
        assert [id(s) for s in train1] == [id(s) for s in train2]
        assert [id(s) for s in test1] == [id(s) for s in test2]

    def test_partition(self):
        pool = self.make_pool(10)
        train, test = split_train_test(pool, 0.8, seed=3)
        ids = {id(s) for s in train} | {id(s) for s in test}
        assert len(ids) == 10 and len(train) + len(test) == 10

    def test_other_seed_same_sizes(self):
        pool = self.make_pool(10)
        train, test = split_train_test(pool, 0.8, seed=8)
        assert len(train) == 8 and len(test) == 2

    def test_too_few(self):
        with pytest.raises(SplitError):
            split_train_test(self.make_pool(1), 0.8, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(ParameterError):
            split_train_test(self.make_pool(4), 1.0, seed=0)
