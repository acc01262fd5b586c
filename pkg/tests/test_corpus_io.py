import json

import numpy as np
import pytest

from spectral_slda.corpus_io import (CorpusFormatError, model_to_dict, read_corpus,
                                     read_docword, read_model, read_responses,
                                     write_docword, write_model, write_moment_dump,
                                     write_responses)
from spectral_slda.model import ModelValidationError, generate_corpus, random_model
from spectral_slda.moments import estimate_moments


def write(path, text):
    path.write_text(text)
    return path


def test_duplicate_triplets_are_summed(tmp_path):
    p = write(tmp_path / "d.txt", "2\n5\n4\n1 1 2\n1 3 1\n2 5 4\n2 2 1\n")
    c = read_docword(p)
    assert c.num_docs == 2 and c.vocab_size == 5
    assert list(c.lengths) == [3, 5]
    p = write(tmp_path / "e.txt", "1\n3\n3\n1 2 1\n1 2 1\n1 3 2\n")
    assert read_docword(p).counts.toarray().tolist() == [[0, 2, 2]]


def test_short_document_names_it(tmp_path):
    lines = [f"{d} 1 3" for d in range(1, 8)]
    lines[6] = "7 1 2"
    p = write(tmp_path / "d.txt", "7\n4\n7\n" + "\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError, match="document 7 has fewer than 3 words"):
        read_docword(p)


@pytest.mark.parametrize("body, lineno", [
    ("2\n5\n1\n1 6 3\n", 4),
    ("2\n5\n1\n1 2 0\n", 4),
    ("2\n5\n1\n3 2 3\n", 4),
    ("2\n5\n1\n1 2\n", 4),
    ("2\n5\n1\n1 x 2\n", 4),
    ("2\nfive\n1\n1 2 3\n", 2),
    ("2\n", 2),
])
def test_malformed_lines_are_located(tmp_path, body, lineno):
    p = write(tmp_path / "bad.txt", body)
    with pytest.raises(CorpusFormatError) as info:
        read_docword(p)
    assert info.value.lineno == lineno
    assert f"bad.txt:{lineno}" in str(info.value)


def test_nnz_mismatch(tmp_path):
    p = write(tmp_path / "d.txt", "1\n3\n2\n1 1 3\n")
    with pytest.raises(CorpusFormatError, match="declares 2 triplets, found 1"):
        read_docword(p)


def test_docword_round_trip(tmp_path):
    c = generate_corpus(random_model(30, 3, seed=1), 40, 12, seed=2)
    write_docword(c, tmp_path / "d.txt")
    back = read_docword(tmp_path / "d.txt")
    assert back.counts.shape == c.counts.shape
    assert (back.counts != c.counts).nnz == 0


def test_read_responses(tmp_path):
    p = write(tmp_path / "y.txt", "0.5\n-1.0\n2.25\n")
    assert read_responses(p, 3).tolist() == [0.5, -1.0, 2.25]
    with pytest.raises(CorpusFormatError, match="expected 4 responses, found 3"):
        read_responses(p, 4)
    p = write(tmp_path / "y2.txt", "0.5\n-1.0\n")
    with pytest.raises(CorpusFormatError, match="expected 3 responses, found 2"):
        read_responses(p, 3)
    assert read_responses(write(tmp_path / "empty.txt", ""), 0).size == 0
    with pytest.raises(CorpusFormatError, match=":2: unparsable"):
        read_responses(write(tmp_path / "bad.txt", "1\nabc\n"), 2)


def test_responses_round_trip_bitwise(tmp_path):
    y = np.random.default_rng(0).standard_normal(100) * 1e3
    write_responses(y, tmp_path / "y.txt")
    assert np.array_equal(read_responses(tmp_path / "y.txt", 100), y)


def test_read_corpus_pairs_responses(tmp_path):
    c = generate_corpus(random_model(10, 2, sigma=0.1, seed=1), 8, 5, seed=0)
    write_docword(c, tmp_path / "d.txt")
    write_responses(c.responses, tmp_path / "y.txt")
    back = read_corpus(tmp_path / "d.txt", tmp_path / "y.txt")
    assert np.array_equal(back.responses, c.responses)


def test_model_round_trip_bitwise(tmp_path):
    m = random_model(13, 4, sigma=0.37, seed=3, alpha=[0.1, 0.2, 0.3, 1 / 3])
    write_model(m, tmp_path / "m.json")
    back = read_model(tmp_path / "m.json")
    assert np.array_equal(back.alpha, m.alpha)
    assert np.array_equal(back.topics, m.topics)
    assert np.array_equal(back.eta, m.eta)
    assert back.sigma == m.sigma


def test_model_file_fields(tmp_path):
    m = random_model(5, 2, seed=0)
    data = model_to_dict(m)
    assert data["version"] == "slda-model/1"
    assert (data["k"], data["V"]) == (2, 5)
    assert len(data["topics"]) == 5 and len(data["topics"][0]) == 2


def _bad_model(tmp_path, mutate):
    data = model_to_dict(random_model(5, 2, seed=0))
    mutate(data)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(data))
    return p


def test_model_column_sum_policy(tmp_path):
    def shrink(d):
        d["topics"] = [[v * 0.9 for v in row] for row in d["topics"]]
    with pytest.raises(ModelValidationError):
        read_model(_bad_model(tmp_path, shrink))

    def nudge(d):
        d["topics"] = [[v * (1 + 1e-8) for v in row] for row in d["topics"]]
    with pytest.warns(UserWarning, match="renormalized"):
        m = read_model(_bad_model(tmp_path, nudge))
    assert np.allclose(m.topics.sum(axis=0), 1, atol=1e-15)


def test_model_version_and_shape_errors(tmp_path):
    with pytest.raises(ModelValidationError, match="version"):
        read_model(_bad_model(tmp_path, lambda d: d.update(version="other/2")))
    with pytest.raises(ModelValidationError, match="shape"):
        read_model(_bad_model(tmp_path, lambda d: d.update(V=6)))
    with pytest.raises(ModelValidationError, match="malformed"):
        read_model(_bad_model(tmp_path, lambda d: d.pop("eta")))
    p = tmp_path / "junk.json"
    p.write_text("{not json")
    with pytest.raises(CorpusFormatError, match="invalid JSON"):
        read_model(p)


def test_moment_dump(tmp_path):
    c = generate_corpus(random_model(6, 2, seed=0), 20, 5, seed=0)
    ms = estimate_moments(c, alpha0=1.0)
    write_moment_dump(ms, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text().splitlines()
    assert text[0].startswith("# V=6 num_docs=20")
    m1 = np.loadtxt(text[2:3])
    assert np.array_equal(m1, ms.m1)
