import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhan.corpus import (
    CorpusError,
    EmbeddingError,
    corpus_from_records,
    fallback_embeddings,
    hash_embed,
    load_corpus,
    load_embeddings,
    write_corpus,
    write_embeddings,
)
from synth import tiny_records, write_jsonl


class TestLoadCorpus:
    def test_singleton_study_gives_singleton_catalogs(self, tmp_path):
        path = tmp_path / "one.jsonl"
        write_jsonl(path, [{
            "id": "X", "title": "t", "description": "d",
            "problems": ["flu"], "interventions": ["rest"], "outcomes": ["recovery"],
        }])
        corpus = load_corpus(path)
        assert corpus.node_counts() == {"evidence": 1, "problem": 1, "intervention": 1, "outcome": 1}

    def test_shared_label_deduplicates(self, tmp_path):
        path = tmp_path / "two.jsonl"
        write_jsonl(path, [
            {"id": "A", "title": "", "description": "", "problems": ["COVID-19"],
             "interventions": ["x"], "outcomes": ["y"]},
            {"id": "B", "title": "", "description": "", "problems": ["covid-19 "],
             "interventions": ["z"], "outcomes": ["y"]},
        ])
        corpus = load_corpus(path)
        assert corpus.problems == ("covid-19",)
        assert corpus.problem_index["covid-19"] == 0
        for study in corpus.studies:
            assert corpus.study_elements(study)["problem"] == (0,)

    def test_catalogs_are_sorted_bijections(self, corpus6):
        for kind in ("problem", "intervention", "outcome"):
            catalog = corpus6.catalog(kind)
            assert list(catalog) == sorted(set(catalog))
        referenced = {p for s in corpus6.studies for p in s.problems}
        assert referenced == set(corpus6.problems)

    def test_catalogs_invariant_under_study_reordering(self):
        records = tiny_records()
        a = corpus_from_records(records)
        b = corpus_from_records(list(reversed(records)))
        assert a.problems == b.problems
        assert a.interventions == b.interventions
        assert a.outcomes == b.outcomes

    def test_duplicate_id_rejected(self):
        rec = tiny_records()[0]
        with pytest.raises(CorpusError, match="duplicate study id"):
            corpus_from_records([rec, rec])

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "A", "title": "t", "description": "d", "problems": ["p"], "interventions": [], "outcomes": []}\nnot json\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(CorpusError, match="empty dataset"):
            load_corpus(path)

    def test_study_without_elements_rejected(self):
        with pytest.raises(CorpusError, match="no elements"):
            corpus_from_records([{"id": "A", "title": "", "description": "",
                                  "problems": [], "interventions": [], "outcomes": []}])

    def test_blank_label_rejected(self):
        with pytest.raises(CorpusError, match="empty label"):
            corpus_from_records([{"id": "A", "title": "", "description": "",
                                  "problems": ["  "], "interventions": [], "outcomes": []}])

    def test_round_trip(self, tmp_path, corpus6):
        path = tmp_path / "round.jsonl"
        write_corpus(path, corpus6)
        again = load_corpus(path)
        assert again == corpus6


class TestEmbeddingsFile:
    def test_round_trip_and_header(self, tmp_path, corpus6, rng):
        table = fallback_embeddings(corpus6, dim=32, seed=1)
        path = tmp_path / "emb.txt"
        write_embeddings(path, corpus6, table)
        assert path.read_text().splitlines()[0] == "dim=32"
        loaded = load_embeddings(path, corpus6)
        assert loaded.dim == 32 and loaded.layer == 0
        for key, vec in table.rows.items():
            np.testing.assert_array_equal(loaded.rows[key], vec)

    def test_missing_label_named_in_error(self, tmp_path, corpus6):
        table = fallback_embeddings(corpus6, dim=8, seed=1)
        path = tmp_path / "emb.txt"
        write_embeddings(path, corpus6, table)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("outcome:marker level")]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EmbeddingError, match="outcome:marker level"):
            load_embeddings(path, corpus6)

    def test_dimension_mismatch_rejected(self, tmp_path, corpus6):
        table = fallback_embeddings(corpus6, dim=8, seed=1)
        path = tmp_path / "emb.txt"
        write_embeddings(path, corpus6, table)
        lines = path.read_text().splitlines()
        head, payload = lines[1].split("\t")
        lines[1] = head + "\t" + " ".join(payload.split()[:-1])
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EmbeddingError, match="expected 8 values, found 7"):
            load_embeddings(path, corpus6)

    def test_non_finite_value_rejected(self, tmp_path, corpus6):
        table = fallback_embeddings(corpus6, dim=4, seed=1)
        path = tmp_path / "emb.txt"
        write_embeddings(path, corpus6, table)
        lines = path.read_text().splitlines()
        head, payload = lines[3].split("\t")
        parts = payload.split()
        parts[0] = "nan"
        lines[3] = head + "\t" + " ".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EmbeddingError, match="non-finite"):
            load_embeddings(path, corpus6)

    def test_unknown_row_rejected(self, tmp_path, corpus6):
        table = fallback_embeddings(corpus6, dim=4, seed=1)
        path = tmp_path / "emb.txt"
        write_embeddings(path, corpus6, table)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("problem:made up\t0.0 0.0 0.0 0.0\n")
        with pytest.raises(EmbeddingError, match="matches no corpus node"):
            load_embeddings(path, corpus6)

    def test_bad_header_rejected(self, tmp_path, corpus6):
        path = tmp_path / "emb.txt"
        path.write_text("dims=9\n")
        with pytest.raises(EmbeddingError, match="bad header"):
            load_embeddings(path, corpus6)


class TestHashEmbed:
    def test_deterministic(self):
        a = hash_embed("Plasma infusion for covid", 64, 3)
        b = hash_embed("Plasma infusion for covid", 64, 3)
        np.testing.assert_array_equal(a, b)

    def test_empty_text_all_zeros(self):
        np.testing.assert_array_equal(hash_embed("", 16, 0), np.zeros(16))
        np.testing.assert_array_equal(hash_embed(" ,;- ", 16, 0), np.zeros(16))

    def test_unit_norm_for_nonempty(self):
        for text in ("one", "alpha beta gamma", "x y z w " * 10):
            assert abs(np.linalg.norm(hash_embed(text, 48, 9)) - 1.0) < 1e-9

    def test_seed_changes_vector(self):
        a = hash_embed("alpha beta", 64, 1)
        b = hash_embed("alpha beta", 64, 2)
        assert not np.array_equal(a, b)

    @given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta"]), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    @settings(max_examples=40, deadline=None)
    def test_depends_only_on_token_multiset(self, tokens, pyrng):
        shuffled = list(tokens)
        pyrng.shuffle(shuffled)
        a = hash_embed(" ".join(tokens), 32, 5)
        b = hash_embed(",  ".join(shuffled).upper(), 32, 5)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_dim_must_be_positive(self):
        with pytest.raises(ValueError):
            hash_embed("x", 0, 1)


def test_fallback_covers_every_node(corpus6):
    table = fallback_embeddings(corpus6, dim=16, seed=2022)
    counts = corpus6.node_counts()
    assert len(table.rows) == sum(counts.values())
    assert all(vec.shape == (16,) for vec in table.rows.values())
