import dataclasses

import pytest

from coseg.config import ConfigError, PipelineConfig, camel, parse_config, snake

DECLARED = {"gamma": 0.6, "tcsCount": 1500, "xInit": 40, "xGrow": 10, "yLarge": 20, "ySmall": 5,
            "yCutoff": 40, "colorWeight": 2.0, "alpha1": 0.5, "alpha2": 1.0, "maxProposalsPerFrame": 200,
            "trwsIters": 500, "trwsTol": 1e-6, "seed": 42}


def test_declared_defaults():
    d = PipelineConfig().to_dict()
    for k, v in DECLARED.items():
        assert d[k] == v


def test_parse_comments_and_blanks():
    text = "# header\n\ngamma = 0.7  # tighter\nseed=3\n"
    assert parse_config(text) == {"gamma": "0.7", "seed": "3"}
    with pytest.raises(ConfigError):
        parse_config("just words\n")


def test_load_and_override(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("tcsCount=100\nwarpRefine=false\n")
    cfg = PipelineConfig.load(p, {"seed": "7"})
    assert (cfg.tcs_count, cfg.warp_refine, cfg.seed) == (100, False, 7)
    assert cfg.gamma == 0.6


def test_dump_round_trip(tmp_path):
    cfg = PipelineConfig(gamma=0.55, trws_tol=1e-8, cluster_selection="fixed")
    cfg.dump(tmp_path / "c.txt")
    assert PipelineConfig.load(tmp_path / "c.txt") == cfg


def test_unset_keys_keep_defaults(tmp_path):
    (tmp_path / "empty.txt").write_text("")
    assert PipelineConfig.load(tmp_path / "empty.txt") == PipelineConfig()


@pytest.mark.parametrize("key,value", [("gamma", "1.5"), ("tcsCount", "3"), ("xInit", "0"),
                                       ("alpha1", "-1"), ("clusterSelection", "random"),
                                       ("refinePriorBlend", "2"), ("seed", "abc"), ("xInit", "2.5"),
                                       ("warpRefine", "maybe")])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        PipelineConfig().updated({key: value})


def test_unknown_key():
    with pytest.raises(ConfigError, match="noSuchKey"):
        PipelineConfig().updated({"noSuchKey": "1"})


def test_key_case_conversion():
    for f in dataclasses.fields(PipelineConfig):
        assert snake(camel(f.name)) == f.name
