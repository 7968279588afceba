import numpy as np
import pytest

from robustslu import corpus
from robustslu.corpus import (Annotation, DataError, LabeledExample, LabelSpace, SlotSpan,
                              Utterance, bio_to_spans, build_vocab, parse_dataset,
                              parse_column_format, repair_bio, spans_to_bio)

FIG1 = "what's the weather in sydney today\tweather/find\tlocation:4-4,datetime:5-5"


def random_annotation(rng, n_tokens, labels):
    spans = []
    pos = 0
    while pos < n_tokens:
        if rng.random() < 0.4:
            end = min(n_tokens - 1, pos + int(rng.integers(0, 3)))
            spans.append(SlotSpan(pos, end, labels[rng.integers(len(labels))]))
            pos = end + 2
        else:
            pos += 1
    return Annotation("intent/x", tuple(spans))


def test_parse_fig1_record():
    examples, space = parse_dataset([FIG1])
    ex = examples[0]
    assert ex.annotation.intent == "weather/find"
    assert ex.annotation.span_set() == {("location", 4, 4), ("datetime", 5, 5)}
    assert ex.utterance.tokens == ("what's", "the", "weather", "in", "sydney", "today")
    assert space.intents == ("weather/find",)


def test_parse_empty_stream_flags_no_training_data():
    with pytest.raises(DataError, match="no training data"):
        parse_dataset([])


def test_parse_rejects_overlapping_spans_with_line_number():
    bad = "set an alarm\talarm/set\tdatetime:1-2,alarm_name:2-2"
    with pytest.raises(DataError, match="line 1"):
        parse_dataset([bad])


def test_parse_rejects_out_of_range_span():
    bad = "set an alarm\talarm/set\tdatetime:2-5"
    with pytest.raises(DataError, match="line 1"):
        parse_dataset([bad])


def test_parse_eval_rejects_unknown_labels():
    _, space = parse_dataset([FIG1])
    with pytest.raises(DataError, match="unknown intent"):
        parse_dataset(["hello there\talarm/set\t"], label_space=space)


def test_parse_serialize_roundtrip():
    lines = [FIG1, "cancel my alarm\talarm/cancel\t", "wake me at 9 am\talarm/set\tdatetime:3-4"]
    examples, _ = parse_dataset(lines)
    redone = [corpus.serialize_example(ex) for ex in examples]
    again, _ = parse_dataset(redone)
    assert [corpus.serialize_example(ex) for ex in again] == redone


def test_labelspace_tag_set_size_and_bijection():
    space = LabelSpace(["a", "b"], ["x", "y", "z"])
    assert len(space.tag_set) == 2 * 3 + 1
    assert sorted(space.tag_index.values()) == list(range(len(space.tag_set)))
    assert all(space.tag_set[i] == t for t, i in space.tag_index.items())


def test_spans_to_bio_fig1():
    ann = Annotation("weather/find", (SlotSpan(4, 4, "location"), SlotSpan(5, 5, "datetime")))
    assert spans_to_bio(ann, 6) == ["O", "O", "O", "O", "B-location", "B-datetime"]


def test_spans_to_bio_no_slots():
    assert spans_to_bio(Annotation("x", ()), 4) == ["O"] * 4


def test_bio_repair_orphan_inside_tag():
    assert repair_bio(["O", "I-datetime"]) == ["O", "B-datetime"]
    assert bio_to_spans(["O", "I-datetime"]) == [SlotSpan(1, 1, "datetime")]


def test_bio_to_spans_basic():
    assert bio_to_spans(["B-loc", "I-loc", "O"]) == [SlotSpan(0, 1, "loc")]
    assert bio_to_spans(["O", "O", "O"]) == []


def test_bio_roundtrip_property():
    rng = np.random.default_rng(0)
    labels = ["loc", "datetime", "name"]
    for _ in range(500):
        n = int(rng.integers(1, 12))
        ann = random_annotation(rng, n, labels)
        tags = spans_to_bio(ann, n)
        assert bio_to_spans(tags) == list(ann.slots)


def test_clean_weight_invariant():
    utt = Utterance.make("u1", "hello world")
    with pytest.raises(DataError):
        LabeledExample(utt, Annotation("x", ()), origin="clean", weight=0.5)


def test_build_vocab_min_count():
    examples, _ = parse_dataset(["a a b\ti\t"])
    vocab = build_vocab(examples, min_count=2)
    assert "a" in vocab.stoi and "b" not in vocab.stoi
    assert vocab.lookup("b") == vocab.unk


def test_build_vocab_min_count_one_keeps_everything():
    examples, _ = parse_dataset(["a b c\ti\t", "c d\ti\t"])
    vocab = build_vocab(examples, min_count=1)
    for tok in ["a", "b", "c", "d"]:
        assert tok in vocab.stoi


def test_vocab_ordering_frequency_then_lexicographic():
    examples, _ = parse_dataset(["b b a a c\ti\t"])
    vocab = build_vocab(examples)
    tail = vocab.itos[len(corpus.RESERVED):]
    assert tail == ["a", "b", "c"]


def test_vocab_reserved_tokens():
    examples, _ = parse_dataset(["hello\ti\t"])
    vocab = build_vocab(examples)
    assert vocab.itos[:4] == ["<pad>", "<unk>", "<bos>", "<eos>"]


def test_column_format_importer():
    lines = [
        "# intent: weather/find",
        "what's\tO",
        "the\tO",
        "weather\tO",
        "in\tO",
        "sydney\tB-location",
        "today\tB-datetime",
        "",
        "# intent: alarm/cancel",
        "cancel\tO",
        "it\tO",
    ]
    examples = parse_column_format(lines)
    assert len(examples) == 2
    assert examples[0].annotation.span_set() == {("location", 4, 4), ("datetime", 5, 5)}
    assert examples[1].annotation.intent == "alarm/cancel"


def test_dataset_file_roundtrip(tmp_path):
    examples, _ = parse_dataset([FIG1])
    path = tmp_path / "data.tsv"
    corpus.write_dataset(path, examples)
    loaded, _ = corpus.load_dataset(path)
    assert corpus.serialize_example(loaded[0]) == corpus.serialize_example(examples[0])
