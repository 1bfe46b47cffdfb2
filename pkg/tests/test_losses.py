import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speclab.distill import SparseLogitRecord, top_k_entries
from speclab.errors import ConfigError, ContractError
from speclab.losses import LossSpec, ce_loss, combined_loss, kd_loss, kd_loss_arrays


def record(position, pairs):
    return SparseLogitRecord(position=position, entries=tuple(pairs))


class TestCrossEntropy:
    def test_uniform_logits_closed_form(self):
        logits = np.zeros((5, 10))
        gold = np.arange(5) % 10
        loss, _ = ce_loss(logits, gold)
        assert abs(loss - np.log(10)) < 1e-6

    def test_concentrated_logits_vanish(self):
        gold = np.array([3, 1])
        logits = np.full((2, 6), -30.0)
        logits[0, 3] = 30.0
        logits[1, 1] = 30.0
        loss, _ = ce_loss(logits, gold)
        assert loss < 1e-8

    def test_gradient_shape_and_mean(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(4, 7))
        gold = rng.integers(0, 7, size=4)
        loss, d = ce_loss(logits, gold)
        assert d.shape == logits.shape
        # each row of softmax-minus-onehot sums to zero
        assert np.allclose(d.sum(axis=-1), 0.0, atol=1e-12)

    def test_mask_restricts_positions(self):
        logits = np.zeros((3, 4))
        logits[2, 0] = 50.0
        gold = np.array([0, 0, 0])
        loss_all, _ = ce_loss(logits, gold)
        loss_last, _ = ce_loss(logits, gold, mask=np.array([0.0, 0.0, 1.0]))
        assert loss_last < 1e-8 < loss_all


class TestDistillation:
    def test_identity_gives_zero(self):
        rng = np.random.default_rng(1)
        student = rng.normal(size=(3, 12))
        records = [record(i, top_k_entries(student[i], 4)) for i in range(3)]
        for kind in ("KL", "TVD"):
            loss, d = kd_loss(student, records, kind)
            assert abs(loss) < 1e-12
            assert np.allclose(d, 0.0, atol=1e-9)

    def test_tvd_hand_value(self):
        # p_t = (0.8, 0.2), p_s = (0.2, 0.8) over k=2 -> tvd 0.6
        t_logits = np.log(np.array([[0.8, 0.2]]))
        s = np.zeros((1, 5))
        s[0, 0] = np.log(0.2)
        s[0, 1] = np.log(0.8)
        loss, _ = kd_loss_arrays(s, np.array([[0, 1]]), t_logits, "TVD")
        assert abs(loss - 0.6) < 1e-9

    def test_k_equals_vocab_matches_dense(self):
        rng = np.random.default_rng(2)
        V = 9
        student = rng.normal(size=(4, V))
        teacher_full = rng.normal(size=(4, V))
        records = [record(i, top_k_entries(teacher_full[i], V)) for i in range(4)]

        def dense(kind):
            p_t = np.exp(teacher_full - teacher_full.max(-1, keepdims=True))
            p_t /= p_t.sum(-1, keepdims=True)
            p_s = np.exp(student - student.max(-1, keepdims=True))
            p_s /= p_s.sum(-1, keepdims=True)
            if kind == "KL":
                return float(np.mean(np.sum(p_t * np.log(p_t / p_s), -1)))
            return float(np.mean(0.5 * np.abs(p_t - p_s).sum(-1)))

        for kind in ("KL", "TVD"):
            loss, _ = kd_loss(student, records, kind)
            assert abs(loss - dense(kind)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        student = rng.normal(scale=3.0, size=(2, 8))
        teacher = rng.normal(scale=3.0, size=(2, 3))
        ids = np.stack([rng.choice(8, size=3, replace=False) for _ in range(2)])
        kl, _ = kd_loss_arrays(student, ids, teacher, "KL")
        tvd, _ = kd_loss_arrays(student, ids, teacher, "TVD")
        assert kl >= 0.0
        assert 0.0 <= tvd <= 1.0

    def test_duplicate_ids_rejected(self):
        student = np.zeros((1, 5))
        with pytest.raises(ContractError):
            kd_loss_arrays(student, np.array([[1, 1]]), np.zeros((1, 2)), "KL")

    def test_empty_records_rejected(self):
        with pytest.raises(ContractError):
            kd_loss(np.zeros((2, 5)), [], "KL")


class TestLossSpec:
    def test_weights_validate(self):
        with pytest.raises(ConfigError):
            LossSpec(ce=0.5, kl=0.2, tvd=0.2)
        with pytest.raises(ConfigError):
            LossSpec(ce=-0.5, kl=1.5)
        LossSpec(ce=0.5, kl=0.5)

    def test_mixture_is_exact_weighted_sum(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(6, 11))
        gold = rng.integers(0, 11, size=6)
        ids = np.stack([rng.choice(11, size=4, replace=False) for _ in range(6)])
        t_logits = rng.normal(size=(6, 4))
        ce, _ = ce_loss(logits, gold)
        kl, _ = kd_loss_arrays(logits, ids, t_logits, "KL")
        tvd, _ = kd_loss_arrays(logits, ids, t_logits, "TVD")
        for spec in (LossSpec(ce=0.5, kl=0.5), LossSpec(ce=0.5, tvd=0.5),
                     LossSpec(ce=0.2, kl=0.3, tvd=0.5)):
            total, _, _ = combined_loss(logits, gold, spec,
                                        teacher_ids=ids, teacher_logits=t_logits)
            expect = spec.ce * ce + spec.kl * kl + spec.tvd * tvd
            assert total == expect

    def test_teacher_required(self):
        with pytest.raises(ConfigError):
            combined_loss(np.zeros((2, 5)), np.zeros(2, dtype=int),
                          LossSpec(ce=0.5, kl=0.5))
