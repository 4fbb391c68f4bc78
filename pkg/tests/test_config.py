import json

import pytest

from gradsample.errors import InputError
from gradsample.sim.config import (
    PRESETS,
    RunConfig,
    apply_overrides,
    from_dict,
    load_config,
    parse_toggles,
    preset,
    schema,
    with_toggles,
)


def test_defaults_match_desk_scale():
    cfg = RunConfig()
    assert (cfg.task.n_majority, cfg.task.n_minority) == (15, 5)
    assert (cfg.task.labeled_per_majority, cfg.task.labeled_per_minority) == (500, 10)
    assert (cfg.task.n_unlabeled_images, cfg.task.proposals_per_image, cfg.task.dim) == (2000, 8, 16)
    assert (cfg.train.generations, cfg.train.steps_per_generation) == (10, 500)
    assert (cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay) == (0.01, 0.9, 1e-4)
    assert cfg.train.eta_p == cfg.reweight.eta_g == 0.9995
    assert cfg.reweight.beta == 0.5
    assert cfg.thresholds.theta_base == 0.9
    assert cfg.sampler.gamma == 0.5
    # one labeled image per four unlabeled
    assert cfg.train.unlabeled_images_per_step == 4 * cfg.train.labeled_images_per_step


def test_round_trip_through_dict():
    cfg = preset("full")
    assert from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(InputError, match="task.bogus"):
        from_dict({"task": {"bogus": 1}})
    with pytest.raises(InputError):
        apply_overrides(RunConfig(), ["train.nope=3"])
    with pytest.raises(InputError):
        apply_overrides(RunConfig(), ["novalue"])


def test_type_checks():
    with pytest.raises(InputError):
        from_dict({"seed": "zero"})
    with pytest.raises(InputError):
        from_dict({"modules": {"crs": 1}})
    assert from_dict({"train": {"lr": 1}}).train.lr == 1.0


@pytest.mark.parametrize("item", ["task.scenario=middling", "thresholds.mode=other", "train.generations=0",
                                  "task.max_objects_per_image=20", "sampler.unlabeled_rule=x"])
def test_validation(item):
    with pytest.raises(InputError):
        apply_overrides(RunConfig(), [item])


def test_overrides_parse_json_values():
    cfg = apply_overrides(RunConfig(), ["seed=7", "modules.crs=true", "task.scenario=scarce", "loss.gamma_focal=1.5"])
    assert cfg.seed == 7 and cfg.modules.crs and cfg.task.scenario == "scarce"
    assert cfg.loss.gamma_focal == 1.5


def test_load_config_reports_location(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(InputError, match=":3:"):
        load_config(path)


def test_presets_and_toggles():
    assert set(PRESETS) >= {"baseline", "fl", "crs", "gbt", "gbr", "crs+gbt", "crs+gbr", "gbt+gbr", "full"}
    full = preset("full").modules
    assert full.crs and full.gbt and full.gbr and full.focal
    base = preset("baseline")
    assert not any([base.modules.crs, base.modules.gbt, base.modules.gbr, base.modules.focal])
    assert base.threshold_mode == "fixed"
    assert parse_toggles("none") == ()
    assert parse_toggles("crs, gbr") == ("crs", "gbr")
    with pytest.raises(InputError):
        parse_toggles("crs,xyz")
    with pytest.raises(InputError):
        preset("everything")
    assert with_toggles(RunConfig(), ("gbt",)).threshold_mode == "gbt"


def test_schema_covers_every_key():
    s = schema()
    assert s["seed"] == {"type": "int", "default": 0}
    assert s["thresholds"]["mode"]["default"] == "gbt"
    assert set(s) == set(RunConfig().to_dict())
