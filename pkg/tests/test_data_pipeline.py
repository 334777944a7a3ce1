import json

import pytest

from helpers import write_filter_fixture
from kanrec.data_pipeline import (
    ABSTRACT_LEN,
    DatasetSplit,
    ImpressionRecord,
    NewsArticle,
    PAD_TOKEN,
    TITLE_LEN,
    apply_filters,
    build_dataset,
    load_dataset,
    pad_tokens,
    parse_behaviors_file,
    parse_news_file,
    save_dataset,
    split_dataset,
    tokenize,
)
from kanrec.errors import DataError, EmptyDatasetError, ParseError


def news_row(news_id, title, abstract, title_entities="[]", abstract_entities="[]"):
    return "\t".join([news_id, "cat", "sub", title, abstract, "url", title_entities, abstract_entities])


def behavior_row(imp_id, user, history, impressions, time="2023-01-01 10:00:00"):
    return "\t".join([imp_id, user, time, history, impressions])


def make_article(news_id, title="headline text", abstract="body text"):
    return NewsArticle(
        news_id=news_id,
        title_tokens=pad_tokens(tokenize(title), TITLE_LEN),
        abstract_tokens=pad_tokens(tokenize(abstract), ABSTRACT_LEN),
    )


def make_record(imp_id, user, history, candidates):
    return ImpressionRecord(
        impression_id=imp_id,
        reader_id=user,
        timestamp="2023-01-01 10:00:00",
        history=history,
        candidates=candidates,
    )


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tokenize("New Zealand re-opens, fully!") == ["new", "zealand", "reopens", "fully"]

    def test_empty(self):
        assert tokenize("") == []


class TestParseNewsFile:
    def test_empty_abstract_pads_fully(self, tmp_path):
        path = tmp_path / "news.tsv"
        path.write_text(news_row("N1", "some title", "") + "\n")
        article = parse_news_file(path)[0]
        assert article.abstract_tokens == [PAD_TOKEN] * ABSTRACT_LEN

    def test_long_title_truncated_to_twenty(self, tmp_path):
        words = [f"w{i}" for i in range(25)]
        path = tmp_path / "news.tsv"
        path.write_text(news_row("N1", " ".join(words), "abstract") + "\n")
        article = parse_news_file(path)[0]
        assert article.title_tokens == words[:20]
        assert len(article.title_tokens) == TITLE_LEN

    def test_entity_ids_extracted_in_order(self, tmp_path):
        blob = json.dumps([{"WikidataId": "Q42", "Label": "x"}, {"WikidataId": "Q7"}])
        path = tmp_path / "news.tsv"
        path.write_text(news_row("N1", "t", "a", title_entities=blob) + "\n")
        article = parse_news_file(path)[0]
        assert article.title_entity_ids == ["Q42", "Q7"]

    def test_malformed_entity_json_degrades_with_warning(self, tmp_path, caplog):
        path = tmp_path / "news.tsv"
        path.write_text(news_row("N1", "t", "a", title_entities="{not json") + "\n")
        with caplog.at_level("WARNING"):
            article = parse_news_file(path)[0]
        assert article.title_entity_ids == []
        assert any("unparsable entity JSON" in m for m in caplog.messages)

    def test_wrong_column_count_names_line(self, tmp_path):
        path = tmp_path / "news.tsv"
        path.write_text(news_row("N1", "t", "a") + "\n" + "N2\tcat\tsub\n")
        with pytest.raises(ParseError, match="2"):
            parse_news_file(path)


class TestParseBehaviorsFile:
    def test_labels_parsed_from_suffix(self, tmp_path):
        path = tmp_path / "behaviors.tsv"
        path.write_text(behavior_row("1", "U1", "N1 N2", "N55689-1 N3-0") + "\n")
        record = parse_behaviors_file(path)[0]
        assert record.candidates == [("N55689", 1), ("N3", 0)]
        assert record.history == ["N1", "N2"]

    def test_empty_history_allowed(self, tmp_path):
        path = tmp_path / "behaviors.tsv"
        path.write_text(behavior_row("1", "U1", "", "N1-1") + "\n")
        assert parse_behaviors_file(path)[0].history == []

    def test_three_candidates_one_click(self, tmp_path):
        path = tmp_path / "behaviors.tsv"
        path.write_text(behavior_row("1", "U1", "N9", "N1-0 N2-1 N3-0") + "\n")
        record = parse_behaviors_file(path)[0]
        assert len(record.candidates) == 3
        assert sum(y for _, y in record.candidates) == 1

    def test_bad_label_suffix_rejected(self, tmp_path):
        path = tmp_path / "behaviors.tsv"
        path.write_text(behavior_row("1", "U1", "", "N1-2") + "\n")
        with pytest.raises(ParseError):
            parse_behaviors_file(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "behaviors.tsv"
        path.write_text("1\tU1\tonly-three\n")
        with pytest.raises(ParseError, match="1"):
            parse_behaviors_file(path)


class TestApplyFilters:
    def test_zero_thresholds_are_identity(self):
        articles = [make_article("N1"), make_article("N2")]
        records = [make_record("1", "U1", ["N1"], [("N2", 1)])]
        kept_records, kept_articles = apply_filters(records, articles, min_readers=0, min_history=0)
        assert kept_records == records
        assert set(kept_articles) == {"N1", "N2"}

    def test_reader_count_threshold(self):
        # five news with reader counts 12, 11, 10, 9, 1
        counts = {"N1": 12, "N2": 11, "N3": 10, "N4": 9, "N5": 1}
        articles = [make_article(n) for n in counts]
        records = []
        for news_id, readers in counts.items():
            for u in range(readers):
                records.append(make_record(f"{news_id}-{u}", f"U{u:02d}", [news_id], [(news_id, 1)]))
        kept_records, kept_articles = apply_filters(records, articles, min_readers=10, min_history=0)
        assert set(kept_articles) == {"N1", "N2", "N3"}
        for record in kept_records:
            assert all(n in kept_articles for n in record.history)

    def test_history_length_boundary(self):
        news = [f"N{i:02d}" for i in range(50)]
        articles = [make_article(n) for n in news]
        deep = make_record("1", "U_deep", news, [("N00", 1)])
        shallow = make_record("2", "U_shallow", news[:49], [("N00", 1)])
        kept_records, _ = apply_filters([deep, shallow], articles, min_readers=0, min_history=50)
        assert {r.reader_id for r in kept_records} == {"U_deep"}

    def test_exposure_does_not_make_a_reader(self):
        articles = [make_article("N1"), make_article("N2")]
        records = [make_record(str(u), f"U{u}", ["N1"], [("N2", 0), ("N1", 1)]) for u in range(3)]
        _, kept_articles = apply_filters(records, articles, min_readers=2, min_history=0)
        assert set(kept_articles) == {"N1"}  # N2 was only shown, never clicked

    def test_everything_filtered_raises(self):
        articles = [make_article("N1")]
        records = [make_record("1", "U1", ["N1"], [("N1", 1)])]
        with pytest.raises(EmptyDatasetError):
            apply_filters(records, articles, min_readers=5, min_history=0)

    def test_idempotent_on_fixture(self, tmp_path):
        fixture = write_filter_fixture(tmp_path)
        articles = parse_news_file(fixture["news"])
        records = parse_behaviors_file(fixture["behaviors"])
        once = apply_filters(records, articles, min_readers=10, min_history=50)
        twice = apply_filters(once[0], once[1], min_readers=10, min_history=50)
        assert twice[0] == once[0]
        assert set(twice[1]) == set(once[1])

    def test_surviving_references_all_resolve(self, tmp_path):
        fixture = write_filter_fixture(tmp_path)
        articles = parse_news_file(fixture["news"])
        records = parse_behaviors_file(fixture["behaviors"])
        kept_records, kept_articles = apply_filters(records, articles, min_readers=10, min_history=50)
        for record in kept_records:
            assert all(n in kept_articles for n in record.history)
            assert all(n in kept_articles for n, _ in record.candidates)


class TestSplitDataset:
    def _records(self, n):
        return [make_record(str(i), f"U{i}", [], [("N1", 1)]) for i in range(n)]

    def _articles(self):
        return {"N1": make_article("N1")}

    def test_ten_records_split_eight_two(self):
        split = split_dataset(self._records(10), self._articles(), ratio=0.8, seed=0)
        assert len(split.train) == 8 and len(split.test) == 2

    def test_eleven_records_floor_train_side(self):
        split = split_dataset(self._records(11), self._articles(), ratio=0.8, seed=0)
        assert len(split.train) == 8 and len(split.test) == 3

    def test_same_seed_same_membership(self):
        records = self._records(20)
        a = split_dataset(records, self._articles(), seed=3)
        b = split_dataset(records, self._articles(), seed=3)
        assert [r.impression_id for r in a.train] == [r.impression_id for r in b.train]
        assert [r.impression_id for r in a.test] == [r.impression_id for r in b.test]

    def test_train_test_disjoint(self):
        split = split_dataset(self._records(17), self._articles(), seed=5)
        train_ids = {r.impression_id for r in split.train}
        test_ids = {r.impression_id for r in split.test}
        assert not train_ids & test_ids
        assert len(train_ids | test_ids) == 17

    def test_too_few_records(self):
        with pytest.raises(DataError):
            split_dataset(self._records(4), self._articles())


class TestHandCountedPipeline:
    def test_filters_split_and_truncation_exact(self, tmp_path):
        fixture = write_filter_fixture(tmp_path)
        split = build_dataset(
            fixture["news"], fixture["behaviors"], min_readers=10, min_history=50, ratio=0.8, seed=0
        )
        assert set(split.articles) == fixture["surviving_news"]
        users = {r.reader_id for r in split.train} | {r.reader_id for r in split.test}
        assert users == fixture["surviving_users"]
        assert len(split.train) + len(split.test) == fixture["surviving_impressions"]
        assert len(split.train) == 8 and len(split.test) == 2
        assert split.articles["N00"].title_tokens == fixture["n00_title"]
        assert split.articles["N00"].abstract_tokens == fixture["n00_abstract"]
        for record in split.train + split.test:
            assert record.candidates == [("N00", 1)]
        assert split.statistics["users"] == 10
        assert split.statistics["behaviours"] == 10


class TestCacheRoundTrip:
    def _split(self, tmp_path) -> DatasetSplit:
        fixture = write_filter_fixture(tmp_path)
        return build_dataset(fixture["news"], fixture["behaviors"], 10, 50, 0.8, seed=1)

    def test_round_trip_equal(self, tmp_path):
        split = self._split(tmp_path)
        path = tmp_path / "cache.json"
        save_dataset(split, path)
        loaded = load_dataset(path)
        assert loaded.train == split.train
        assert loaded.test == split.test
        assert loaded.articles == split.articles
        assert loaded.word_tokens == split.word_tokens
        assert loaded.entity_ids == split.entity_ids
        assert loaded.statistics == split.statistics

    def test_rewrite_is_byte_identical(self, tmp_path):
        split = self._split(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(split, a)
        save_dataset(load_dataset(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_version_mismatch_rejected(self, tmp_path):
        split = self._split(tmp_path)
        path = tmp_path / "cache.json"
        save_dataset(split, path)
        blob = json.loads(path.read_text())
        blob["version"] = 99
        path.write_text(json.dumps(blob))
        with pytest.raises(DataError, match="version"):
            load_dataset(path)

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "cache.json"
        path.write_text(json.dumps({"magic": "elsewhere"}))
        with pytest.raises(DataError):
            load_dataset(path)
