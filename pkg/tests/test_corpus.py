import json

import pytest

from umlcot.corpus import (
    RunConfig,
    evaluate_corpus,
    load_corpus,
    parse_corpus_lines,
    read_config_file,
    resolve_config,
    write_corpus,
)
from umlcot.exceptions import DuplicateId, InputError, MalformedLine

from conftest import REFERENCE_PLAN, synthetic_corpus, tagged, write_jsonl


def record(i, pred=None, **over):
    rec = {"id": f"r{i}", "reference": {"format": "uml", "content": REFERENCE_PLAN},
           "prediction": tagged(REFERENCE_PLAN) if pred is None else pred}
    rec.update(over)
    return json.dumps(rec)


class TestLoad:
    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("\n".join(record(i) for i in range(3)) + "\n")
        insts = load_corpus(path)
        assert [i.id for i in insts] == ["r0", "r1", "r2"]
        assert insts[0].diagram is not None and insts[0].diagram.node_count == 7

    def test_blank_lines_skipped(self):
        assert len(parse_corpus_lines([record(0), "", "   ", record(1)])) == 2

    def test_missing_prediction_reports_line(self):
        bad = json.loads(record(1))
        del bad["prediction"]
        with pytest.raises(MalformedLine) as err:
            parse_corpus_lines([record(0), json.dumps(bad), record(2)])
        assert err.value.line == 2

    @pytest.mark.parametrize(
        "over",
        [
            {"reference": {"format": "uml", "content": "partition A { :x; }"}},
            {"reference": {"format": "yaml", "content": "x"}},
            {"reference": "plain"},
            {"id": ""},
            {"meta": {"nested": {"a": 1}}},
        ],
    )
    def test_malformed_fields(self, over):
        with pytest.raises(MalformedLine):
            parse_corpus_lines([record(0, **over)])

    def test_invalid_json(self):
        with pytest.raises(MalformedLine) as err:
            parse_corpus_lines(["{not json"])
        assert err.value.line == 1

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId) as err:
            parse_corpus_lines([record(0), record(1), record(0)])
        assert err.value.line == 3 and err.value.instance_id == "r0"

    def test_write_round_trip(self, tmp_path):
        insts = parse_corpus_lines(json.dumps(r) for r in synthetic_corpus(8))
        write_corpus(insts, tmp_path / "out.jsonl")
        assert load_corpus(tmp_path / "out.jsonl") == insts


class TestConfig:
    def test_defaults(self):
        cfg = resolve_config({}, None, env={})
        assert cfg == RunConfig()
        assert cfg.embedder.backend == "builtin" and cfg.threshold == 0.5 and cfg.epsilon == 1e-4

    def test_precedence(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("threshold = 0.6\nepsilon = 0.01\n# comment\n")
        env = {"UMLCOT_THRESHOLD": "0.7", "UMLCOT_EPSILON": "0.02", "UMLCOT_SEED": "9"}
        cfg = resolve_config({"threshold": 0.8, "epsilon": None}, conf, env=env)
        assert cfg.threshold == 0.8  # cli
        assert cfg.epsilon == 0.01  # file
        assert cfg.seed == 9  # env

    def test_endpoint_env(self):
        cfg = resolve_config({"embedder": "service"}, None, env={"EMBED_ENDPOINT": "http://x:1"})
        assert cfg.embedder.endpoint == "http://x:1"

    def test_service_without_endpoint(self):
        with pytest.raises(InputError):
            resolve_config({"embedder": "service"}, None, env={})

    def test_unknown_file_key(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("thresold = 0.6\n")
        with pytest.raises(InputError, match="thresold"):
            read_config_file(conf)

    @pytest.mark.parametrize("cli", [{"threshold": 1.5}, {"epsilon": 0.0}, {"group_size": 1}, {"threshold": "high"}])
    def test_bad_values(self, cli):
        with pytest.raises(InputError):
            resolve_config(cli, None, env={})


class TestEvaluate:
    def test_perfect_corpus(self):
        insts = parse_corpus_lines(record(i) for i in range(5))
        report = evaluate_corpus(insts)
        agg = report.aggregate
        assert (agg.similarity, agg.precision, agg.recall, agg.f1) == (1.0, 1.0, 1.0, 1.0)
        assert report.reward_means["total"] == 2.0

    def test_unformatted_prediction_scores_zero(self):
        insts = parse_corpus_lines([record(0, pred=REFERENCE_PLAN)])
        res = evaluate_corpus(insts).per_instance[0]
        assert res.reward.total == 0.0 and res.metrics.tp == 0 and res.metrics.fn == 7

    def test_jobs_do_not_change_output(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, synthetic_corpus(24, seed=3))
        insts = load_corpus(path)
        assert evaluate_corpus(insts, jobs=4).to_json() == evaluate_corpus(insts).to_json()

    def test_mode_override(self):
        insts = parse_corpus_lines([record(0)])
        report = evaluate_corpus(insts, RunConfig(mode="text"))
        assert report.per_instance[0].reward.mode == "text"
        assert report.per_instance[0].reward.accuracy_reward == 1.0
