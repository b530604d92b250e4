import numpy as np
import pytest
import torch

from featinject.backbone.hooks import attention, features
from featinject.features import (
    BankError, BankManifest, BankMismatchError, DuplicateEntryError, FeatureBank, InjectionConfig,
    MissingEntryError, load_bank, overrides_for_step, save_bank,
)

F4 = features("decoder", 4)
A5 = attention("decoder", 5)


def make_bank(backbone, timesteps=(40, 20)):
    return FeatureBank(BankManifest(backbone.checkpoint_id, "a red circle", timesteps, 0), backbone.site_shapes)


def rand(shape, seed=0):
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed))


def test_store_and_get(random_backbone):
    bank = make_bank(random_backbone)
    v = rand((48, 16, 16))
    bank.record(F4, 40, v)
    assert torch.equal(bank.get(F4, 40), v)
    assert (F4, 40) in bank and len(bank) == 1
    with pytest.raises(MissingEntryError):
        bank.get(F4, 20)


def test_write_once_and_manifest(random_backbone):
    bank = make_bank(random_backbone)
    bank.record(F4, 40, rand((48, 16, 16)))
    with pytest.raises(DuplicateEntryError):
        bank.record(F4, 40, rand((48, 16, 16)))
    with pytest.raises(BankError):
        bank.record(F4, 30, rand((48, 16, 16)))
    with pytest.raises(BankError):
        bank.record(F4, 20, rand((48, 8, 8)))
    bank.seal()
    with pytest.raises(BankError):
        bank.record(A5, 20, rand((2, 256, 256)))


def test_bank_round_trip(random_backbone, tmp_path):
    bank = make_bank(random_backbone)
    bank.record(F4, 40, rand((48, 16, 16), 1))
    bank.record(A5, 20, torch.softmax(rand((2, 256, 256), 2), -1))
    save_bank(bank, tmp_path / "bank")
    again = load_bank(tmp_path / "bank", random_backbone)
    assert again.sealed and again.keys() == bank.keys()
    assert again.manifest == bank.manifest
    for key in bank.keys():
        assert torch.equal(again.get(*key), bank.get(*key))


def test_bank_checkpoint_mismatch(random_backbone, toy_backbone, tmp_path):
    bank = make_bank(random_backbone)
    bank.record(F4, 40, rand((48, 16, 16)))
    save_bank(bank, tmp_path / "bank")
    with pytest.raises(BankMismatchError):
        load_bank(tmp_path / "bank", toy_backbone)


def test_bank_missing_entry_file(random_backbone, tmp_path):
    bank = make_bank(random_backbone)
    bank.record(F4, 40, rand((48, 16, 16)))
    bank.record(F4, 20, rand((48, 16, 16)))
    save_bank(bank, tmp_path / "bank")
    next((tmp_path / "bank" / "entries").glob("*t0020*")).unlink()
    with pytest.raises(MissingEntryError, match=r"decoder\.4\.resblock_features.*t=20"):
        load_bank(tmp_path / "bank", random_backbone)


def test_injection_counts_defaults():
    cfg = InjectionConfig(tau_f=40, tau_A=25, attention_layers={4, 5, 6, 7}, n_steps=50)
    feat = [i for i in range(50) if cfg.injects_features(i)]
    attn = [i for i in range(50) if cfg.injects_attention(i)]
    assert feat == list(range(10))
    assert attn == list(range(25))


@pytest.mark.parametrize("n,tau_f,tau_A", [(50, 40, 25), (50, 50, 0), (50, 0, 50), (10, 3, 7), (1, 0, 1)])
def test_injection_count_identity(n, tau_f, tau_A):
    cfg = InjectionConfig(tau_f=tau_f, tau_A=tau_A, attention_layers={4}, n_steps=n)
    steps = [overrides_for_step(cfg, i, 1000 - 20 * i) for i in range(n)]
    assert sum(F4 in s for s in steps) == n - tau_f
    assert sum(attention("decoder", 4) in s for s in steps) == n - tau_A


def test_overrides_map_to_bank_keys():
    cfg = InjectionConfig(attention_layers={4, 5})
    o = overrides_for_step(cfg, 0, 1000)
    assert o == {F4: (F4, 1000), attention("decoder", 4): (attention("decoder", 4), 1000),
                 A5: (A5, 1000)}
    assert overrides_for_step(cfg, 49, 20) == {}
    with pytest.raises(ValueError):
        overrides_for_step(cfg, 50, 0)


def test_ablation_schedules_differ_only_in_sites():
    full = InjectionConfig(attention_layers={4, 5})
    wo_feat = InjectionConfig(tau_f=50, attention_layers={4, 5})
    wo_attn = InjectionConfig(tau_A=50, attention_layers={4, 5})
    for i in range(50):
        f = overrides_for_step(full, i, 1000 - 20 * i)
        a = overrides_for_step(wo_feat, i, 1000 - 20 * i)
        b = overrides_for_step(wo_attn, i, 1000 - 20 * i)
        assert a == {k: v for k, v in f.items() if k.kind != "resblock_features"}
        assert b == {k: v for k, v in f.items() if k.kind != "attention_matrix"}


def test_config_validation(random_backbone):
    with pytest.raises(ValueError):
        InjectionConfig(tau_f=51)
    with pytest.raises(ValueError):
        InjectionConfig(tau_A=-1)
    with pytest.raises(ValueError):
        InjectionConfig(feature_layers={12}).resolve(random_backbone)
    with pytest.raises(ValueError):
        InjectionConfig().attention_sites()
    cfg = InjectionConfig().resolve(random_backbone)
    assert cfg.attention_layers == frozenset(range(1, 8))
    assert cfg.feature_sites() == [F4]
    enc = InjectionConfig(encoder_feature_layers={7}).resolve(random_backbone)
    assert features("encoder", 7) in enc.feature_sites()
