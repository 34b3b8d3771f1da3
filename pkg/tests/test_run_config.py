import json

import pytest

from core.errors import UsageError
from core.run_config import (
    COMMAND_DEFAULTS,
    FULL_SCALE,
    PRESETS,
    RunConfig,
    env_seed,
    parse_grid,
    parse_list,
    parse_range,
)


@pytest.mark.parametrize("suffix", [".json", ".yaml"])
def test_config_round_trip(tmp_path, suffix):
    cfg = RunConfig("sweep", Q=[8.0], grid=(4, 5), alpha_range=(0.01, 1.0), seed=3)
    path = cfg.save(tmp_path / f"cfg{suffix}")
    assert RunConfig.load(path) == cfg


def test_from_dict_accepts_meta_document():
    cfg = RunConfig("theory", mu=1.0, L=4.0, nesterov=True)
    assert RunConfig.from_dict({"config": cfg.to_dict(), "results": {}}) == cfg


def test_from_dict_rejects_bad_documents():
    with pytest.raises(UsageError):
        RunConfig.from_dict({"command": "theory", "momentum": 0.9})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"mu": 1.0})


def test_load_rejects_missing_and_non_mapping(tmp_path):
    with pytest.raises(UsageError):
        RunConfig.load(tmp_path / "missing.json")
    path = tmp_path / "list.json"
    path.write_text(json.dumps([1, 2]))
    with pytest.raises(UsageError):
        RunConfig.load(path)


def test_preset_fills_only_unset_fields():
    cfg = RunConfig("counterexample", preset="fig2", seeds=5).with_preset(explicit=("seeds",))
    assert cfg.seeds == 5
    assert cfg.n == PRESETS["fig2"]["n"]
    assert cfg.L == 100.0


def test_preset_must_match_command():
    with pytest.raises(UsageError):
        RunConfig("sweep", preset="fig2").with_preset()
    with pytest.raises(UsageError):
        RunConfig("sweep", preset="nope").with_preset()


def test_full_scale_overrides():
    cfg = RunConfig("sweep", preset="fig1", full_scale=True).with_preset()
    assert cfg.grid == FULL_SCALE["sweep"]["grid"]
    assert cfg.trials == FULL_SCALE["sweep"]["trials"]
    kept = RunConfig("sweep", full_scale=True, trials=2).with_preset(explicit=("trials",))
    assert kept.trials == 2


def test_logreg_presets_sample_zero_momentum():
    assert PRESETS["f2"]["grid"][1] % 2 == 1
    assert FULL_SCALE["logreg"]["grid"][1] % 2 == 1
    assert COMMAND_DEFAULTS["logreg"]["grid"][1] % 2 == 1


def test_command_defaults_rank_below_preset_and_flags():
    cfg = RunConfig("logreg").with_preset()
    assert (cfg.n_samples, cfg.d, cfg.grid) == (100, 10, (12, 13))
    assert RunConfig("logreg", d=3).with_preset(explicit=("d",)).d == 3
    assert RunConfig("logreg", full_scale=True).with_preset().grid == FULL_SCALE["logreg"]["grid"]
    # 其它子命令不受影响
    assert RunConfig("sweep").with_preset().d == 100


@pytest.mark.parametrize("preset", ["fig1", "f1"])
def test_sweep_presets_validate_on_their_own(preset):
    cfg = RunConfig("sweep", preset=preset, seed=0).with_preset().validate()
    assert cfg.bounds().Q == pytest.approx(8.0)


def test_validate_collects_errors():
    with pytest.raises(UsageError) as info:
        RunConfig("theory", mu=2.0, L=1.0, beta=1.5, alpha=0.1).validate()
    message = str(info.value)
    assert "--L must be >= --mu" in message
    assert "|beta| < 1" in message
    with pytest.raises(UsageError):
        RunConfig("theory", mu=1.0, L=2.0).validate()
    with pytest.raises(UsageError):
        RunConfig("counterexample", n=[2]).validate()
    with pytest.raises(UsageError):
        RunConfig("sweep", Q=[8.0], formats=["png"]).validate()
    assert RunConfig("theory", mu=1.0, L=2.0, nesterov=True).validate().nesterov
    with pytest.raises(UsageError):
        RunConfig("theory", Q=[2.0, 8.0], nesterov=True).validate()
    with pytest.raises(UsageError):
        RunConfig("sweep", Q=[2.0, 8.0], mu=1.0, L=4.0).validate()
    assert RunConfig("sweep", Q=[2.0, 8.0]).validate().Q == [2.0, 8.0]


def test_bounds_from_condition():
    b = RunConfig("theory", Q=[16.0], L=2.0).bounds()
    assert (b.mu, b.L) == (pytest.approx(0.125), 2.0)
    with pytest.raises(UsageError):
        RunConfig("theory").bounds()


def test_seed_from_environment(monkeypatch):
    assert env_seed() == 0
    monkeypatch.setenv("MOMLAB_SEED", "42")
    assert RunConfig("sweep").resolve_seed().seed == 42
    assert RunConfig("sweep", seed=7).resolve_seed().seed == 7
    monkeypatch.setenv("MOMLAB_SEED", "forty-two")
    with pytest.raises(UsageError):
        env_seed()


def test_argument_parsers():
    assert parse_grid("32x16") == (32, 16)
    assert parse_range("0.01:2") == (0.01, 2.0)
    assert parse_list("50,1000", int) == [50, 1000]
    for bad in (lambda: parse_grid("32"), lambda: parse_range("1"), lambda: parse_list("a,b", int)):
        with pytest.raises(UsageError):
            bad()
