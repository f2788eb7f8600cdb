import math

import pytest

import charnmt

WORDS = ["red", "fox", "owl", "sat", "cat", "dog", "ran", "sun"]


def shift(word):
    return "".join(chr(ord("a") + (ord(c) - ord("a") + 7) % 26) for c in word)


def corpus(n):
    src, tgt = [], []
    for i in range(n):
        words = [WORDS[(i * 3 + k) % len(WORDS)] for k in range(2 + i % 2)]
        src.append(" ".join(words))
        tgt.append(" ".join(shift(w) for w in reversed(words)))
    return src, tgt


def test_bleu_hand_values():
    assert charnmt.bleu(["a b c d"], ["a b c d e"])["bleu"] == pytest.approx(math.exp(-0.25), abs=1e-9)
    assert charnmt.bleu(["a b"], ["a b c d"])["bleu"] == 0.0
    with pytest.raises(charnmt.AlignmentError):
        charnmt.bleu(["a"], ["a", "b"])


def test_bpe_and_vocabulary(tmp_path):
    src, _ = corpus(20)
    merges = charnmt.learn_bpe(src, 10)
    assert 0 < len(merges) <= 10
    pieces = merges.segment("red fox")
    assert "".join(p.replace("@@", "") for p in pieces) == "redfox"
    merges.save(str(tmp_path / "m.bpe"))
    assert charnmt.MergeTable.load(str(tmp_path / "m.bpe")).rules == merges.rules

    vocab = charnmt.build_vocab(["ab  c"], charnmt.Unit.character)
    assert vocab.symbols[:4] == ["<s>", "</s>", "<unk>", "<pad>"]
    assert vocab.split("a  b") == ["a", " ", "b"]
    vocab.save(str(tmp_path / "v.txt"))
    again = charnmt.Vocabulary.load(str(tmp_path / "v.txt"), charnmt.Unit.character)
    assert again.fingerprint == vocab.fingerprint


def test_train_and_translate(tmp_path):
    src, tgt = corpus(24)
    for name, lines in [("train.src", src), ("train.tgt", tgt), ("dev.src", src[:4]), ("dev.tgt", tgt[:4])]:
        (tmp_path / name).write_text("\n".join(lines) + "\n")
    charnmt.build_vocab(src, charnmt.Unit.subword).save(str(tmp_path / "src.vocab"))
    charnmt.build_vocab(tgt, charnmt.Unit.character).save(str(tmp_path / "tgt.vocab"))
    config = tmp_path / "run.cfg"
    config.write_text(
        "\n".join(
            [
                f"train_source = {tmp_path / 'train.src'}",
                f"train_target = {tmp_path / 'train.tgt'}",
                f"dev_source = {tmp_path / 'dev.src'}",
                f"dev_target = {tmp_path / 'dev.tgt'}",
                f"source_vocab = {tmp_path / 'src.vocab'}",
                f"target_vocab = {tmp_path / 'tgt.vocab'}",
                f"output_dir = {tmp_path / 'run'}",
                "embed_dim = 6",
                "encoder_dim = 7",
                "decoder_dim = 8",
                "batch_size = 4",
                "valid_interval = 3",
            ]
        )
        + "\n"
    )
    lines = []
    summary = charnmt.train(str(config), ["max_steps=6"], report=lines.append)
    assert summary["steps"] == 6
    assert lines

    ckpt = str(tmp_path / "run" / "latest")
    assert charnmt.checkpoint_precision(ckpt) == "narrow"
    tr = charnmt.Translator([ckpt, ckpt])
    assert len(tr) == 2
    out = tr.translate(src[:3], beam=3)
    assert len(out) == 3
    for item in out:
        assert isinstance(item["text"], str)
        assert len(item["alignment"]) >= 1
        for row in item["alignment"]:
            assert sum(row) == pytest.approx(1.0, abs=1e-6)


def test_errors(tmp_path):
    with pytest.raises(charnmt.PathError):
        charnmt.Translator([str(tmp_path / "missing")])
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    with pytest.raises(charnmt.ConfigError):
        charnmt.train(str(bad))
    assert issubclass(charnmt.ConfigError, charnmt.Error)
