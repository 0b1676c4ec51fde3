import json
import os
import subprocess
import sys

import numpy as np
import pytest

from embedder import EmbedJob, EmbedderError, embed_corpus
from embedder.cli import main
from embedder.encode import read_nodes

REFERENCE_DATA = os.environ.get("MHAN_REFERENCE_DATA")


def parse_embedding_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        rows = {}
        for line in fh:
            head, payload = line.rstrip("\n").split("\t")
            rows[head] = np.array([float(x) for x in payload.split()])
    return header, rows


def test_header_and_coverage(tiny_model_dir, dataset, tmp_path):
    out = tmp_path / "emb.txt"
    summary = embed_corpus(EmbedJob(dataset=dataset, out=str(out), model=tiny_model_dir))
    header, rows = parse_embedding_file(out)
    assert header == "dim=768"
    assert summary["dim"] == 768
    # 3 studies + 2 problems + 2 interventions + 2 outcomes
    assert summary["rows"] == len(rows) == 9
    assert "evidence:S1" in rows
    assert "problem:syndrome beta" in rows  # labels are normalized
    assert all(vec.shape == (768,) for vec in rows.values())
    assert all(np.all(np.isfinite(vec)) for vec in rows.values())
    assert all(np.any(vec != 0) for vec in rows.values())


def test_identical_texts_get_identical_vectors(tiny_model_dir, dataset, tmp_path):
    out = tmp_path / "emb.txt"
    embed_corpus(EmbedJob(dataset=dataset, out=str(out), model=tiny_model_dir))
    _header, rows = parse_embedding_file(out)
    a, b = rows["evidence:S1"], rows["evidence:S2"]
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert abs(cos - 1.0) < 1e-6
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert not np.allclose(rows["evidence:S1"], rows["evidence:S3"])


def test_output_deterministic_across_runs(tiny_model_dir, dataset, tmp_path):
    out1, out2 = tmp_path / "a.txt", tmp_path / "b.txt"
    embed_corpus(EmbedJob(dataset=dataset, out=str(out1), model=tiny_model_dir))
    embed_corpus(EmbedJob(dataset=dataset, out=str(out2), model=tiny_model_dir))
    assert out1.read_bytes() == out2.read_bytes()


def test_pooling_modes_differ_but_cover_same_nodes(tiny_model_dir, dataset, tmp_path):
    out_cls, out_mean = tmp_path / "cls.txt", tmp_path / "mean.txt"
    embed_corpus(EmbedJob(dataset=dataset, out=str(out_cls), model=tiny_model_dir, pooling="cls"))
    embed_corpus(EmbedJob(dataset=dataset, out=str(out_mean), model=tiny_model_dir, pooling="mean"))
    _h1, cls_rows = parse_embedding_file(out_cls)
    _h2, mean_rows = parse_embedding_file(out_mean)
    assert set(cls_rows) == set(mean_rows)
    assert not np.allclose(cls_rows["evidence:S1"], mean_rows["evidence:S1"])


def test_long_text_truncates_with_warning(tiny_model_dir, tmp_path, caplog):
    path = tmp_path / "long.jsonl"
    record = {
        "id": "L1",
        "title": "alpha",
        "description": "beta gamma delta " * 40,
        "problems": ["p"],
        "interventions": [],
        "outcomes": [],
    }
    path.write_text(json.dumps(record) + "\n")
    out = tmp_path / "emb.txt"
    with caplog.at_level("WARNING"):
        embed_corpus(EmbedJob(dataset=str(path), out=str(out), model=tiny_model_dir))
    assert any("truncat" in message for message in caplog.messages)
    _header, rows = parse_embedding_file(out)
    assert np.all(np.isfinite(rows["evidence:L1"]))


def test_bad_model_leaves_no_partial_output(dataset, tmp_path):
    out = tmp_path / "emb.txt"
    with pytest.raises(EmbedderError, match="cannot load model"):
        embed_corpus(EmbedJob(dataset=dataset, out=str(out), model=str(tmp_path / "missing")))
    assert not out.exists()
    assert not [name for name in os.listdir(tmp_path) if name.endswith(".tmp")]


def test_read_nodes_rejects_duplicates_and_garbage(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "A", "title": "t", "description": "", "problems": ["p"]}\nnot json\n')
    with pytest.raises(EmbedderError, match="line 2|:2"):
        read_nodes(str(path))
    path.write_text(
        '{"id": "A", "title": "t", "description": "", "problems": ["p"]}\n'
        '{"id": "A", "title": "t", "description": "", "problems": ["q"]}\n'
    )
    with pytest.raises(EmbedderError, match="duplicate"):
        read_nodes(str(path))


def test_cli_roundtrip(tiny_model_dir, dataset, tmp_path, capsys):
    out = tmp_path / "emb.txt"
    code = main(["--dataset", dataset, "--out", str(out), "--model", tiny_model_dir, "--pooling", "mean"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 9 and summary["pooling"] == "mean"
    assert out.exists()


def test_cli_error_exit_code(tmp_path, capsys):
    code = main(["--dataset", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o.txt")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_output_accepted_by_recommender_interface(tiny_model_dir, dataset, tmp_path):
    """The recommender's own loader must take the file without complaint.

    Exercised through its public CLI: a zero-epoch training run parses the
    dataset and the embedding file, then writes a checkpoint.
    """
    out = tmp_path / "emb.txt"
    embed_corpus(EmbedJob(dataset=dataset, out=str(out), model=tiny_model_dir))
    result = subprocess.run(
        [
            sys.executable, "-m", "mhan.cli", "train",
            "--dataset", dataset, "--embeddings", str(out), "--out", str(tmp_path / "run"),
            "--epochs", "0", "--layers", "1", "--hidden-dim", "4", "--hgt-heads", "2",
            "--gat-heads", "2", "--fusional-heads", "2", "--neg-k", "1",
            "--similarity-normalization", "shifted",
        ],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr
    summary = json.loads(result.stdout)
    assert os.path.exists(summary["files"]["checkpoint"])


@pytest.mark.skipif(not REFERENCE_DATA, reason="MHAN_REFERENCE_DATA not set")
def test_reference_corpus_row_count(tiny_model_dir, tmp_path):
    out = tmp_path / "reference-emb.txt"
    summary = embed_corpus(EmbedJob(dataset=REFERENCE_DATA, out=str(out), model=tiny_model_dir))
    assert summary["rows"] == 1417
