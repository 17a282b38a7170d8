import math
from collections import Counter

import numpy as np
import pytest

from mhan.data import Document, EmbeddingTable, LabelVocab, encode_documents
from mhan.errors import ConfigError, ContractError
from mhan.model import ModelConfig, build_model
from mhan.multitask import (
    MultiTaskConfig,
    SharingScheme,
    build_mhan,
    count_params,
    cyclic_batch,
    joint_loss,
    joint_step,
)
from mhan.optim import SGD, Adam

from oracles import scheme_total

LANGS = ("en", "de")


def dense_cfgs(k=(300, 300), encoder="dense", **kw):
    return {lang: ModelConfig(k=kk, encoder=encoder, **kw) for lang, kk in zip(LANGS, k)}


class TestBuild:
    def test_both_identities(self):
        reg = build_mhan(dense_cfgs(), "both", 0)
        assert reg["en"].word_encoder is reg["de"].word_encoder
        assert reg.tensor("word_attention.u", "en") is reg.tensor("word_attention.u", "de")
        assert reg["en"].classifier is not reg["de"].classifier

    def test_mono_all_distinct(self):
        reg = build_mhan(dense_cfgs(), SharingScheme.MONO, 0)
        ids = [id(t) for lang in LANGS for t in reg[lang].parameters()]
        assert len(ids) == len(set(ids))

    def test_attention_bias_shared(self):
        reg = build_mhan(dense_cfgs(), "att", 0)
        assert reg.tensor("sentence_attention.b", "en") is reg.tensor("sentence_attention.b", "de")
        assert count_params(reg).shares_attention_bias

    @pytest.mark.parametrize("scheme", list(SharingScheme))
    def test_view_round_trip(self, scheme):
        reg = build_mhan(dense_cfgs(), scheme, 0)
        shared = set(scheme.shared_components)
        for lang in LANGS:
            roles = [r for r, _ in reg[lang].named_tensors()]
            assert len(roles) == 2 + 3 + 2 + 3 + 2  # encoders W,b; attentions W,b,u; classifier W,b
            for role in roles:
                expect = "shared" if role.split(".")[0] in shared else "language"
                assert reg.scope(role) == expect

    def test_shared_mutation_visible(self):
        reg = build_mhan(dense_cfgs(), "enc", 0)
        reg.tensor("word_encoder.W", "en").data[0, 0] = 123.0
        assert reg.tensor("word_encoder.W", "de").data[0, 0] == 123.0

    def test_dim_mismatch(self):
        cfgs = {"en": ModelConfig(k=3, d_w=100), "de": ModelConfig(k=3, d_w=50)}
        with pytest.raises(ConfigError):
            build_mhan(cfgs, "enc", 0)
        build_mhan(cfgs, "mono", 0)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            build_mhan(dense_cfgs(), "all", 0)

    def test_deterministic(self):
        a, b = build_mhan(dense_cfgs(), "both", 3), build_mhan(dense_cfgs(), "both", 3)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(ta.data, tb.data)


class TestCount:
    @pytest.mark.parametrize(
        "scheme,expected",
        [("mono", 129_800), ("enc", 115_600), ("att", 109_400), ("both", 95_200)],
    )
    def test_dense_k300(self, scheme, expected):
        assert count_params(build_mhan(dense_cfgs(), scheme, 0)).total == expected

    def test_att_breakdown(self):
        c = count_params(build_mhan(dense_cfgs(), "att", 0))
        assert c.shared == 20_400
        assert c.specific == {"en": 44_500, "de": 44_500}
        assert c.per_language == {"en": 64_900, "de": 64_900}
        assert c.average_per_language == 54_700

    @pytest.mark.parametrize("encoder", ["dense", "gru", "bigru"])
    @pytest.mark.parametrize("scheme", list(SharingScheme))
    def test_matches_oracle(self, encoder, scheme):
        ks = (5, 9, 3)
        cfgs = {lang: ModelConfig(k=k, encoder=encoder) for lang, k in zip(("en", "de", "es"), ks)}
        got = count_params(build_mhan(cfgs, scheme, 0)).total
        assert got == scheme_total(encoder, ks, scheme)

    def test_gru_swap(self):
        counts = {s: count_params(build_mhan(dense_cfgs(encoder="gru"), s, 0)).total for s in SharingScheme}
        assert counts[SharingScheme.ATT] == 286_200
        assert counts[SharingScheme.ENC] == 204_000
        assert counts[SharingScheme.MONO] > counts[SharingScheme.ATT] > counts[SharingScheme.ENC] > counts[SharingScheme.BOTH]

    @pytest.mark.parametrize("scheme", list(SharingScheme))
    def test_single_language_degenerates(self, scheme):
        cfg = ModelConfig(k=17, encoder="gru", d_w=8, d_s=6, d_a=5)
        reg = build_mhan({"en": cfg}, scheme, 0)
        assert count_params(reg).total == build_model(cfg, 0).count()


class TestCyclicBatch:
    @pytest.mark.parametrize("m,per", [(2, 8), (8, 2), (4, 4), (1, 16)])
    def test_exact_counts(self, m, per):
        sizes = {f"l{i}": 5 + i for i in range(m)}
        rng = np.random.default_rng(0)
        for _ in range(20):
            batch = cyclic_batch(sizes, 16, rng)
            assert len(batch) == 16
            assert Counter(lang for lang, _ in batch) == {lang: per for lang in sizes}
            assert all(0 <= i < sizes[lang] for lang, i in batch)

    def test_interleaved(self):
        batch = cyclic_batch({"en": 3, "de": 3}, 6, np.random.default_rng(0))
        assert [lang for lang, _ in batch] == ["en", "de"] * 3

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            cyclic_batch({"a": 1, "b": 1, "c": 1}, 16, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            MultiTaskConfig(("a", "b", "c"), batch_size=16).validate()

    def test_empty_language(self):
        with pytest.raises(ContractError):
            cyclic_batch({"a": 0, "b": 4}, 4, np.random.default_rng(0))

    def test_uniform_with_replacement(self):
        rng = np.random.default_rng(1)
        counts = Counter(i for _ in range(2000) for _, i in cyclic_batch({"a": 4}, 8, rng))
        for c in counts.values():
            assert abs(c / 16000 - 0.25) < 0.02


def _setup(scheme, k=(4, 4), seed=0, n=6, encoder="dense"):
    rng = np.random.default_rng(seed)
    words = ["w0", "w1", "w2", "w3"]
    emb = EmbeddingTable.from_vectors({lang: {w: rng.uniform(-1, 1, 5) for w in words} for lang in LANGS}, 5)
    sets = {}
    for lang, kk in zip(LANGS, k):
        labels = tuple(f"{lang}{j}" for j in range(kk))
        docs = [
            Document(f"{lang}{i}", lang,
                     tuple(tuple(rng.choice(words, size=int(rng.integers(1, 4)))) for _ in range(int(rng.integers(1, 3)))),
                     (labels[i % kk],))
            for i in range(n)
        ]
        sets[lang] = encode_documents(docs, emb, LabelVocab(lang, labels))
    cfgs = {lang: ModelConfig(k=kk, encoder=encoder, d=5, d_w=4, d_s=3, d_a=2) for lang, kk in zip(LANGS, k)}
    return build_mhan(cfgs, scheme, seed), sets, emb


class TestJointStep:
    def test_zero_params_ln2(self):
        reg, sets, emb = _setup("both")
        for t in reg.parameters():
            t.data[...] = 0.0
        batch = cyclic_batch({lang: len(s) for lang, s in sets.items()}, 8, np.random.default_rng(0))
        res = joint_step(batch, reg, sets, emb, SGD(reg.parameters(), 0.0))
        assert abs(res.loss.item() - math.log(2)) < 1e-15

    def test_gamma_zero_gives_zero_grads(self):
        reg, sets, emb = _setup("enc")
        batch = cyclic_batch({lang: len(s) for lang, s in sets.items()}, 8, np.random.default_rng(0))
        joint_step(batch, reg, sets, emb, SGD(reg.parameters(), 0.0), gammas={"en": 1.0, "de": 0.0})
        for name, t in reg.named_parameters():
            if name.startswith("de/"):
                assert not np.any(t.grad)

    def test_unknown_language(self):
        reg, sets, emb = _setup("both")
        with pytest.raises(ContractError):
            joint_loss([("fr", 0)], reg, sets, emb)

    @pytest.mark.parametrize("encoder", ["dense", "gru"])
    def test_shared_grad_is_sum_of_monolingual(self, encoder):
        reg, sets, emb = _setup("both", k=(3, 5), encoder=encoder)
        batch = cyclic_batch({lang: len(s) for lang, s in sets.items()}, 8, np.random.default_rng(2))
        joint_loss(batch, reg, sets, emb).loss.backward()

        total = {}
        for lang in LANGS:
            mono = build_mhan({lang: reg.configs[lang]}, "mono", 99)
            for role, t in mono[lang].named_tensors():
                t.data[...] = reg.tensor(role, lang).data
            sub = [(lg, i) for lg, i in batch if lg == lang]
            # monolingual mean loss, reweighted to this language's batch share
            (joint_loss(sub, mono, sets, emb).loss * (len(sub) / len(batch))).backward()
            for role, t in mono[lang].named_tensors():
                if reg.scope(role) == "shared":
                    total[role] = total.get(role, 0.0) + t.grad
        assert total
        for role, g in total.items():
            np.testing.assert_allclose(reg.tensor(role, "en").grad, g, rtol=0, atol=1e-10)

    def test_adam_one_moment_pair_per_distinct_tensor(self):
        reg, sets, emb = _setup("both")
        all_views = [t for lang in LANGS for t in reg[lang].parameters()]
        opt = Adam(all_views)
        assert len(opt.m) == len(opt.v) == len(reg.parameters()) == len({id(t) for t in all_views})
        assert len(all_views) > len(opt.m)
