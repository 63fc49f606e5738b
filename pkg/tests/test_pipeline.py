"""Pipeline orchestration: validation, staging, resumability, determinism,
and the CLI wiring on top of it."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from fixtures import build_golden_fixture, build_identity_fixture
from tokmap.cli import main
from tokmap.errors import ConfigError
from tokmap.mapper import load_mapping
from tokmap.pipeline import PipelineConfig, run_pipeline
from tokmap.tensors import read_tensor


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestConfig:
    def test_missing_corpus_fails_before_work(self, tmp_path):
        config = PipelineConfig(
            corpus=[str(tmp_path / "absent.txt")],
            source_vocab="x", target_vocab="y", pretokenized=True)
        with pytest.raises(ConfigError, match="corpus file not found"):
            config.validate()
        assert not (tmp_path / "out").exists()

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"corpus": "c.txt", "sourcevocab": "v"}', encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown config fields"):
            PipelineConfig.from_file(path)

    def test_raw_text_needs_merges(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a ||| b\n", encoding="utf-8")
        vocab = tmp_path / "v.json"
        vocab.write_text("{}", encoding="utf-8")
        config = PipelineConfig(corpus=[str(corpus)], source_vocab=str(vocab),
                                target_vocab=str(vocab))
        with pytest.raises(ConfigError, match="merges"):
            config.validate()

    def test_thread_count_validated(self, tmp_path):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a ||| b\n", encoding="utf-8")
        vocab = tmp_path / "v.json"
        vocab.write_text("{}", encoding="utf-8")
        config = PipelineConfig(corpus=[str(corpus)], source_vocab=str(vocab),
                                target_vocab=str(vocab), pretokenized=True, threads=0)
        with pytest.raises(ConfigError, match="thread"):
            config.validate()


class TestGoldenSmall:
    """Scaled-down worked example keeps the unit suite fast; the full-size
    corpus runs in the acceptance module."""

    def test_weights_match_construction(self, tmp_path):
        counts = (137, 122, 54)
        config_path, src_vocab, tgt_vocab = build_golden_fixture(
            tmp_path / "golden", counts)
        result = run_pipeline(PipelineConfig.from_file(config_path))
        mapping = load_mapping(result.artifacts["mapping"])
        row = dict(mapping.rows[tgt_vocab.id_of("_vijftien")])
        total = counts[0] + counts[1] + counts[2]
        assert row[src_vocab.id_of("_fifteen")] == pytest.approx(counts[0] / total)
        assert row[src_vocab.id_of("_15")] == pytest.approx(counts[1] / total)
        assert row[src_vocab.id_of("_Fif")] == pytest.approx(counts[2] / 2 / total)
        assert row[src_vocab.id_of("teen")] == pytest.approx(counts[2] / 2 / total)

    def test_effective_config_echoed(self, tmp_path):
        config_path, _, _ = build_golden_fixture(tmp_path / "golden", (20, 15, 12))
        result = run_pipeline(PipelineConfig.from_file(config_path))
        echoed = json.loads(
            (Path(result.out_dir) / "effective_config.json").read_text())
        assert echoed["min_count"] == 10
        assert echoed["pretokenized"] is True

    def test_pharaoh_export(self, tmp_path):
        config_path, _, _ = build_golden_fixture(tmp_path / "golden", (20, 15, 12))
        config = PipelineConfig.from_file(config_path)
        config.export_pharaoh = True
        result = run_pipeline(config)
        lines = Path(result.artifacts["pharaoh"]).read_text().splitlines()
        assert len(lines) == 47
        assert lines[0] == "0-0"


class TestResumability:
    def test_rerun_skips_everything(self, tmp_path):
        config_path, _, _ = build_golden_fixture(tmp_path / "g", (20, 15, 12))
        config = PipelineConfig.from_file(config_path)
        first = run_pipeline(config)
        assert first.stages_run == ["wordize", "align", "count", "map"]
        second = run_pipeline(config)
        assert second.stages_run == []
        assert second.stages_skipped == ["wordize", "align", "count", "map"]

    def test_deleting_final_artifact_recomputes_only_map(self, tmp_path):
        config_path, _, _ = build_golden_fixture(tmp_path / "g", (20, 15, 12))
        config = PipelineConfig.from_file(config_path)
        first = run_pipeline(config)
        mapping_digest = digest(first.artifacts["mapping"])
        Path(first.artifacts["mapping"]).unlink()
        second = run_pipeline(config)
        assert second.stages_run == ["map"]
        assert set(second.stages_skipped) == {"wordize", "align", "count"}
        assert digest(second.artifacts["mapping"]) == mapping_digest

    def test_parameter_change_invalidates_downstream(self, tmp_path):
        config_path, _, _ = build_golden_fixture(tmp_path / "g", (20, 15, 12))
        config = PipelineConfig.from_file(config_path)
        run_pipeline(config)
        config.min_count = 11
        second = run_pipeline(config)
        assert second.stages_run == ["map"]


class TestDeterminism:
    def test_byte_identical_across_thread_counts(self, tmp_path):
        digests = []
        for threads in (1, 2, 8):
            config_path, _, _, _ = build_identity_fixture(
                tmp_path / f"t{threads}", repeats=12)
            config = PipelineConfig.from_file(config_path)
            config.threads = threads
            config.shard_size = 16  # several shards even on this small corpus
            result = run_pipeline(config)
            digests.append((
                digest(result.artifacts["mapping"]),
                digest(result.artifacts["remapped"]),
                digest(result.artifacts["word_counts"]),
            ))
        assert digests[0] == digests[1] == digests[2]


class TestIdentityPipeline:
    def test_remapped_equals_source(self, tmp_path):
        config_path, vocab, merges, embeddings = build_identity_fixture(tmp_path / "id")
        result = run_pipeline(PipelineConfig.from_file(config_path))
        remapped = read_tensor(result.artifacts["remapped"], "embeddings")
        np.testing.assert_allclose(remapped.data, embeddings.data, atol=1e-6)

    def test_in_order_strategy_also_identity(self, tmp_path):
        config_path, vocab, merges, embeddings = build_identity_fixture(tmp_path / "id")
        config = PipelineConfig.from_file(config_path)
        config.strategy = "in_order"
        result = run_pipeline(config)
        remapped = read_tensor(result.artifacts["remapped"], "embeddings")
        np.testing.assert_allclose(remapped.data, embeddings.data, atol=1e-6)


class TestCli:
    def test_ppl_normalize(self, capsys):
        assert main(["ppl-normalize", "--mean-loss", "3.1321",
                     "--model-tokens", "8116", "--native-tokens", "3081"]) == 0
        assert capsys.readouterr().out.strip() == "60.3815"

    def test_run_exit_code_2_on_bad_config(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "corpus": str(tmp_path / "absent.txt"),
            "source_vocab": "a", "target_vocab": "b",
        }), encoding="utf-8")
        assert main(["run", "--config", str(config)]) == 2

    def test_run_exit_code_3_on_stage_failure(self, tmp_path, capsys):
        config_path, _, _ = build_golden_fixture(tmp_path / "g", (5, 4, 3))
        corpus = tmp_path / "g" / "corpus.txt"
        corpus.write_text("_fifteen ||| _unknowntoken\n", encoding="utf-8")
        assert main(["run", "--config", str(config_path)]) == 3
        assert "wordize" in capsys.readouterr().err

    def test_run_golden(self, tmp_path, capsys):
        config_path, _, _ = build_golden_fixture(tmp_path / "g", (20, 15, 12))
        assert main(["run", "--config", str(config_path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["stages_run"] == ["wordize", "align", "count", "map"]
        assert Path(payload["artifacts"]["mapping"]).is_file()

    def test_full_subcommand_chain(self, tmp_path, capsys):
        # train-bpe -> tokenize -> align -> count -> map -> remap -> stats
        text = tmp_path / "text.txt"
        text.write_text("\n".join(
            ["the cat sat on the mat", "the dog sat on the cat"] * 12) + "\n",
            encoding="utf-8")
        vocab_path = tmp_path / "vocab.json"
        merges_path = tmp_path / "merges.txt"
        assert main(["train-bpe", "--input", str(text), "--vocab-size", "60",
                     "--out-vocab", str(vocab_path),
                     "--out-merges", str(merges_path)]) == 0

        tokenized = tmp_path / "tokenized.txt"
        assert main(["tokenize", "--vocab", str(vocab_path), "--merges",
                     str(merges_path), "--input", str(text),
                     "--output", str(tokenized)]) == 0
        assert tokenized.read_text().splitlines()[0].startswith("_the")

        corpus = tmp_path / "corpus.txt"
        with open(corpus, "w", encoding="utf-8") as fh:
            for line in text.read_text().splitlines():
                fh.write(f"{line} ||| {line}\n")

        pharaoh = tmp_path / "alignments.txt"
        base = ["--corpus", str(corpus),
                "--source-vocab", str(vocab_path), "--source-merges", str(merges_path),
                "--target-vocab", str(vocab_path), "--target-merges", str(merges_path)]
        assert main(["align", *base, "--iters", "4",
                     "--export-pharaoh", str(pharaoh)]) == 0

        counts = tmp_path / "counts.tsv"
        assert main(["count", *base, "--alignments", str(pharaoh),
                     "--out", str(counts)]) == 0

        mapping = tmp_path / "mapping.json"
        readable = tmp_path / "mapping.txt"
        assert main(["map", "--counts", str(counts),
                     "--source-vocab", str(vocab_path),
                     "--target-vocab", str(vocab_path),
                     "--min-count", "5",
                     "--out", str(mapping), "--readable", str(readable)]) == 0
        assert readable.read_text(encoding="utf-8")

        rng = np.random.default_rng(0)
        from tokmap.tensors import EmbeddingTable, write_tensor
        from tokmap.wordizer import Vocab

        vocab = Vocab.load(vocab_path)
        emb_path = tmp_path / "emb.tensors"
        write_tensor(emb_path, [EmbeddingTable(
            rng.standard_normal((len(vocab), 8)).astype(np.float32),
            "F32", "embeddings")])
        out_path = tmp_path / "remapped.tensors"
        report_path = tmp_path / "report.json"
        assert main(["remap", "--source-embeddings", str(emb_path),
                     "--mapping", str(mapping), "--out", str(out_path),
                     "--fallback", "mean", "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert (report["embeddings"]["mapped_count"]
                + report["embeddings"]["fallback_count"]) == len(vocab)

        capsys.readouterr()
        assert main(["stats", "--mapping", str(mapping),
                     "--source-vocab", str(vocab_path),
                     "--target-vocab", str(vocab_path)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["mapped_count"] >= 1
        assert 0.0 <= stats["identity_fraction"] <= 1.0

    def test_hydra_subcommand(self, tmp_path):
        from tokmap.tensors import EmbeddingTable, write_tensor
        from conftest import word_start_vocab

        rng = np.random.default_rng(1)
        target_vocab = word_start_vocab(["_a", "_b"])
        extra_vocab = word_start_vocab(["_x", "_y", "_z"])
        tv_path = tmp_path / "tv.json"
        ev_path = tmp_path / "ev.json"
        target_vocab.save(tv_path)
        extra_vocab.save(ev_path)
        t_path = tmp_path / "t.tensors"
        e_path = tmp_path / "e.tensors"
        write_tensor(t_path, [
            EmbeddingTable(rng.standard_normal((5, 4)).astype(np.float32), "F32", "emb"),
            EmbeddingTable(rng.standard_normal((5, 4)).astype(np.float32), "F32", "head"),
        ])
        write_tensor(e_path, [
            EmbeddingTable(rng.standard_normal((6, 4)).astype(np.float32), "F32", "emb"),
        ])
        manifest = tmp_path / "hydra.json"
        tensors_out = tmp_path / "hydra.tensors"
        assert main(["hydra", "--target-vocab", str(tv_path),
                     "--embeddings", f"{t_path}:emb", "--head", f"{t_path}:head",
                     "--extra", f"{ev_path}:{e_path}:emb",
                     "--out-manifest", str(manifest),
                     "--out-tensors", str(tensors_out)]) == 0
        payload = json.loads(manifest.read_text())
        assert payload["output_vocab_size"] == 5
        assert payload["segments"][1]["offset"] == 5
