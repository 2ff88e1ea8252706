import pytest

from nightdepth.tests.conftest import parameter_hash, same_parameters
from nightdepth.training.ablation import PRESETS, compare_gt_modes, preset_config, run_ablation, summarize
from nightdepth.training.config import TrainConfig
from nightdepth.training.state import build_state
from nightdepth.training.trainer import _pretrain_enhancer, train_loop
from nightdepth.utils.validation import ValidationError

QUICK = TrainConfig(batch_size=2, epochs=1, max_steps_per_epoch=1, mask_a=0.2, mask_b=0.8)


def test_presets_cover_the_component_ladder():
    assert list(PRESETS) == ["separate", "joint", "joint+M_h", "joint+M_uc", "full"]
    full = preset_config("full")
    assert (full.enhancer_mode, full.mask_mode, full.denoiser) == ("joint", "illumination", "gaussian")
    separate = preset_config("separate", seed=4)
    assert separate.enhancer_mode == "separate"
    assert separate.seed == 4
    assert preset_config("joint+M_h").mask_mode == "histogram"


def test_every_preset_gets_the_same_enhancer_warm_start():
    steps = {preset_config(name).enhancer_pretrain_steps for name in PRESETS}
    assert len(steps) == 1 and steps.pop() > 0


def test_joint_and_separate_start_from_the_same_enhancer(tmp_path, tiny_dataset):
    configs = {name: preset_config(name, QUICK).with_overrides({"enhancer_pretrain_steps": 5})
               for name in ("separate", "joint")}
    warm = {}
    for name, config in configs.items():
        state = build_state(config)
        _pretrain_enhancer(state, tiny_dataset)
        warm[name] = state
    start = parameter_hash(warm["separate"].enhancer)
    assert same_parameters(start, warm["joint"].enhancer)
    assert not same_parameters(parameter_hash(build_state(configs["joint"]).enhancer), warm["joint"].enhancer)
    assert all(p.requires_grad for p in warm["joint"].enhancer.parameters())
    assert not any(p.requires_grad for p in warm["separate"].enhancer.parameters())

    separate = train_loop(configs["separate"], tiny_dataset, tmp_path / "separate")
    joint = train_loop(configs["joint"], tiny_dataset, tmp_path / "joint")
    assert same_parameters(start, separate.enhancer)
    assert not same_parameters(start, joint.enhancer)


def test_unknown_preset_is_rejected():
    with pytest.raises(ValidationError) as excinfo:
        preset_config("everything")
    assert excinfo.value.suggestions


def test_summarize_takes_medians():
    rows = [
        {"preset": "joint", "seed": 0, "abs_rel": 0.3, "rmse_over": 5.0},
        {"preset": "joint", "seed": 1, "abs_rel": 0.1, "rmse_over": 9.0},
        {"preset": "joint", "seed": 2, "abs_rel": 0.2, "rmse_over": 7.0},
        {"preset": "full", "seed": 0, "abs_rel": 0.05, "rmse_over": 2.0},
    ]
    summary = summarize(rows)
    assert summary["joint"] == {"abs_rel": 0.2, "rmse_over": 7.0, "runs": 3}
    assert summary["full"]["runs"] == 1


def test_compare_gt_modes_reports_both(tiny_dataset):
    result = compare_gt_modes(build_state(QUICK), tiny_dataset)
    assert set(result) == {"dense", "sparse"}
    assert result["dense"]["frames"] == result["sparse"]["frames"] == len(tiny_dataset)


def test_run_ablation_writes_tables(tmp_path, tiny_dataset):
    rows, summary = run_ablation(tiny_dataset, tiny_dataset, tmp_path, presets=["joint", "full"],
                                 seeds=[0], base=QUICK)
    assert [row["preset"] for row in rows] == ["joint", "full"]
    assert set(summary) == {"joint", "full"}
    for name in ("runs.csv", "summary.csv", "summary.txt"):
        assert (tmp_path / name).is_file()
    assert (tmp_path / "joint" / "seed0" / "checkpoint_last.pt").is_file()

