"""Reliable-prediction harvesting, pruning, and the expansion loop."""

import numpy as np
import pytest

from kcrf.corpus import TagSet
from kcrf.crf import Model, model_to_bytes
from kcrf.expansion import collect_candidates, expand, prune, reliable_positions
from kcrf.features import FeatureConfig, FeatureVocabulary, vectorize
from kcrf.knowledge import KnowledgeBase, kb_diff

from helpers import brute_marginals, emission_matrix, sent


DEP_VBZ = "[DEP|nmod:with|VBZ]"


def kb_model(weight: float = 6.0) -> Model:
    """Knowledge-preset model over exactly the two ENT indicator features."""
    vocab = FeatureVocabulary(["KB:ENT:[WORD]", f"KB:ENT:{DEP_VBZ}"]).freeze()
    sw = np.array([[weight, -weight], [weight, -weight]])
    return Model(
        tagset=TagSet(("ENT", "O")),
        vocabulary=vocab,
        config=FeatureConfig("knowledge"),
        state_weights=sw,
        trans_weights=np.zeros((3, 2)),
    )


def pp(verb: str, noun: str):
    """'stand <verb> my <noun>' with the verb governing the noun via nmod:with."""
    return sent(
        [
            ("stand", "NN", 2, "nsubj"),
            (verb, "VBZ", 0, "root"),
            ("my", "PRP$", 4, "nmod:poss"),
            (noun, "NNP", 2, "nmod:with"),
        ]
    )


@pytest.fixture
def kb0():
    return KnowledgeBase({"ENT": {"[WORD]": {"iphone"}, DEP_VBZ: {"works"}}})


class TestReliablePositions:
    def test_zero_weight_model_yields_none(self, kb0):
        assert reliable_positions(kb_model(0.0), kb0, pp("works", "iphone")) == []

    def test_saturated_position_returned(self, kb0):
        s = pp("holds", "iphone")
        got = reliable_positions(kb_model(), kb0, s, 0.8)
        assert got == [(4, "ENT")]
        # cross-check the marginal against enumeration
        m = kb_model()
        x = vectorize(s, m.vocabulary, kb0, m.config)
        brute, _ = brute_marginals(emission_matrix(m, x), m.trans_weights)
        assert brute[3].max() > 0.8
        assert int(brute[3].argmax()) == 0

    def test_threshold_one_is_unreachable(self, kb0):
        assert reliable_positions(kb_model(50.0), kb0, pp("works", "iphone"), 1.0) == []

    def test_threshold_validation(self, kb0):
        with pytest.raises(ValueError):
            expand(kb_model(), kb0, [], delta_prime=0.0)
        with pytest.raises(ValueError):
            expand(kb_model(), kb0, [], max_iters=0)


class TestCollectCandidates:
    def test_new_context_verb_harvested(self, kb0):
        s = pp("holds", "iphone")
        k = {"ENT": frozenset({"[WORD]", DEP_VBZ}), "O": frozenset()}
        cands = collect_candidates(s, [(4, "ENT")], k, kb0)
        assert cands == {"ENT": {(DEP_VBZ, "holds")}}

    def test_known_values_skipped(self, kb0):
        s = pp("works", "iphone")
        k = {"ENT": frozenset({"[WORD]", DEP_VBZ})}
        assert collect_candidates(s, [(4, "ENT")], k, kb0) == {}

    def test_position_without_matching_types_contributes_nothing(self, kb0):
        s = pp("holds", "iphone")
        k = {"ENT": frozenset({"[GOV|dobj|NN]"}), "O": frozenset()}
        assert collect_candidates(s, [(4, "ENT")], k, kb0) == {}
        # reliable tag with no selected types at all
        assert collect_candidates(s, [(4, "O")], k, kb0) == {}


class TestPrune:
    def test_shared_pair_removed_from_all_tags(self):
        c = {
            "ENT": {("[WORD]", "goes"), ("[WORD]", "pixel")},
            "O": {("[WORD]", "goes")},
        }
        assert prune(c) == {"ENT": {("[WORD]", "pixel")}}

    def test_disjoint_input_unchanged(self):
        c = {"ENT": {("[WORD]", "a")}, "O": {("[WORD]", "b")}}
        assert prune(c) == c

    def test_matches_set_algebra(self):
        rng = np.random.default_rng(13)
        universe = [("[WORD]", f"v{i}") for i in range(12)]
        tags = ("A", "B", "C")
        for _ in range(100):
            cands = {
                t: {universe[i] for i in rng.choice(12, size=rng.integers(0, 8), replace=False)}
                for t in tags
            }
            got = prune(dict(cands))
            for t in tags:
                others = set().union(*(cands[o] for o in tags if o != t))
                expected = cands[t] - others
                assert got.get(t, set()) == expected
            # pairwise disjoint afterwards
            tags_present = list(got)
            for i, a in enumerate(tags_present):
                for b in tags_present[i + 1:]:
                    assert not (got[a] & got[b])


class TestExpand:
    def test_empty_unlabeled_is_one_empty_iteration(self, kb0):
        m = kb_model()
        kb, trace = expand(m, kb0, [])
        assert kb == kb0
        assert len(trace.iterations) == 1
        assert trace.iterations[0].candidates_raw == {"ENT": 0, "O": 0}
        assert not trace.capped

    def test_all_known_values_terminate_immediately(self, kb0):
        m = kb_model()
        kb, trace = expand(m, kb0, [pp("works", "iphone")] * 5)
        assert kb == kb0
        assert len(trace.iterations) == 1

    def test_two_step_bootstrap(self, kb0):
        """'holds' rides in on a known word, then carries a new word in."""
        m = kb_model()
        before = model_to_bytes(m)
        unlabeled = [pp("holds", "iphone"), pp("holds", "kindle")]
        kb, trace = expand(m, kb0, unlabeled)
        assert kb_diff(kb0, kb) == [
            ("ENT", DEP_VBZ, "holds"),
            ("ENT", "[WORD]", "kindle"),
        ]
        assert len(trace.iterations) == 3  # harvest verb, harvest word, settle
        per_iter = [t.candidates_pruned["ENT"] for t in trace.iterations]
        assert per_iter == [1, 1, 0]
        # the kindle sentence only became reliable once 'holds' was knowledge
        assert trace.iterations[0].reliable["ENT"] == 1
        assert trace.iterations[1].reliable["ENT"] == 2
        assert model_to_bytes(m) == before

    def test_growth_is_monotone_and_pruned_sets_disjoint(self, kb0):
        m = kb_model()
        unlabeled = [
            pp("holds", "iphone"), pp("holds", "kindle"), pp("carries", "iphone"),
            pp("carries", "surface"), pp("works", "iphone"),
        ]
        kb, trace = expand(m, kb0, unlabeled)
        previous = kb0
        for stats in trace.iterations:
            assert set(previous.entries()) <= set(stats.kb_after.entries())
            previous = stats.kb_after
            pairs = list(stats.pruned_pairs.values())
            for i, a in enumerate(pairs):
                for b in pairs[i + 1:]:
                    assert not (a & b)
        assert previous == kb

    def test_result_independent_of_sentence_order(self, kb0):
        m = kb_model()
        unlabeled = [pp("holds", "iphone"), pp("carries", "iphone"), pp("holds", "kindle")]
        kb_a, _ = expand(m, kb0, unlabeled)
        kb_b, _ = expand(m, kb0, list(reversed(unlabeled)))
        assert kb_a == kb_b

    def test_iteration_cap_sets_warning(self, kb0):
        m = kb_model()
        unlabeled = [pp("holds", "iphone"), pp("holds", "kindle")]
        kb, trace = expand(m, kb0, unlabeled, max_iters=1)
        assert trace.capped
        assert len(trace.iterations) == 1
        assert kb.contains("ENT", DEP_VBZ, "holds")
        assert not kb.contains("ENT", "[WORD]", "kindle")

    def test_strict_mode_blocks_cross_tag_values(self):
        # 'iphone' is already O-knowledge; strict mode refuses it for ENT
        kb = KnowledgeBase(
            {
                "ENT": {"[WORD]": {"ipad"}, DEP_VBZ: {"works"}},
                "O": {"[WORD]": {"iphone"}},
            }
        )
        m = kb_model()
        unlabeled = [pp("works", "ipad"), pp("works", "iphone")]
        grown, _ = expand(m, kb, unlabeled, strict=False)
        assert grown.contains("ENT", "[WORD]", "iphone")
        grown_strict, _ = expand(m, kb, unlabeled, strict=True)
        assert not grown_strict.contains("ENT", "[WORD]", "iphone")

    def test_trace_records_and_jsonl(self, kb0, tmp_path):
        m = kb_model()
        _, trace = expand(m, kb0, [pp("holds", "iphone")])
        rows = trace.records(("ENT", "O"))
        assert rows[0] == {
            "iteration": 1,
            "tag": "ENT",
            "reliable_count": 1,
            "candidates_raw": 1,
            "candidates_pruned": 1,
            "kb_size": 3,
        }
        out = tmp_path / "trace.jsonl"
        trace.write_jsonl(out, ("ENT", "O"))
        lines = out.read_text().splitlines()
        assert len(lines) == 2 * len(trace.iterations)
