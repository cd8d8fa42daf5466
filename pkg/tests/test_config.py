import pytest

from tagsmith import HashingEncoder, InvalidInput, MockCompletionClient, RemoteEncoder
from tagsmith.config import (
    ENV_COMPLETION_URL,
    ENV_ENCODER_URL,
    build_completion_client,
    build_encoder,
    load_config,
)
from tagsmith.genkit import HttpCompletionClient


def write(tmp_path, text):
    path = tmp_path / "tagsmith.conf"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults(self):
        config = load_config(None)
        assert config.graph.delta_ct == 0.5
        assert config.graph.delta_cc == 0.8
        assert config.graph.cap_c2t == 15
        assert config.graph.cap_c2c2t == 5
        assert config.calibration.threshold == 0.5
        assert config.icl_n == 3
        assert config.rag_n == 3

    def test_parses_values_and_comments(self, tmp_path):
        path = write(
            tmp_path,
            """
# a comment
graph.delta_ct = 0.25   # trailing comment
parallelism = 4
encoder.dim = 32
""",
        )
        config = load_config(path)
        assert config.graph.delta_ct == 0.25
        assert config.parallelism == 4
        assert config.encoder.dim == 32

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(InvalidInput, match="colour"):
            load_config(write(tmp_path, "colour = blue\n"))

    def test_duplicate_key_rejected(self, tmp_path):
        with pytest.raises(InvalidInput, match="duplicate"):
            load_config(write(tmp_path, "icl_n = 1\nicl_n = 2\n"))

    def test_bad_number_rejected(self, tmp_path):
        with pytest.raises(InvalidInput, match="graph.delta_ct"):
            load_config(write(tmp_path, "graph.delta_ct = много\n"))

    def test_missing_equals_rejected(self, tmp_path):
        with pytest.raises(InvalidInput, match="line 1"):
            load_config(write(tmp_path, "just some words\n"))


class TestBuilders:
    def test_hashing_encoder_default(self):
        config = load_config(None)
        encoder = build_encoder(config)
        assert isinstance(encoder, HashingEncoder)
        assert encoder.dim == 256

    def test_remote_encoder_env_override(self, tmp_path, monkeypatch):
        config = load_config(write(tmp_path, "encoder.kind = remote\nencoder.dim = 8\n"))
        with pytest.raises(InvalidInput):
            build_encoder(config)
        monkeypatch.setenv(ENV_ENCODER_URL, "http://enc.test/embed")
        encoder = build_encoder(config)
        assert isinstance(encoder, RemoteEncoder)
        assert "enc.test" in encoder.identity

    def test_mock_completion_requires_script(self, tmp_path):
        config = load_config(None)
        with pytest.raises(InvalidInput, match="script"):
            build_completion_client(config)

    def test_mock_completion_from_script(self, tmp_path):
        script = tmp_path / "script.jsonl"
        script.write_text('{"contains": "x", "response": "TAG: none"}\n', encoding="utf-8")
        config = load_config(write(tmp_path, f"completion.script = {script}\n"))
        client = build_completion_client(config)
        assert isinstance(client, MockCompletionClient)

    def test_remote_completion_env_override(self, tmp_path, monkeypatch):
        config = load_config(write(tmp_path, "completion.kind = remote\n"))
        with pytest.raises(InvalidInput):
            build_completion_client(config)
        monkeypatch.setenv(ENV_COMPLETION_URL, "http://llm.test/complete")
        client = build_completion_client(config)
        assert isinstance(client, HttpCompletionClient)
