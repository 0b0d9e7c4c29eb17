import math

import numpy as np
import pytest

from modalsplit import synth
from modalsplit.model import build_model, flatten_params, joint_objective, module_param_counts
from modalsplit.storage import save_checkpoint, load_checkpoint
from modalsplit.tensor import Tensor
from modalsplit import training as TR
from modalsplit.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    accuracy_score,
    evaluate,
    per_class_stats,
    pretrain,
    train_joint,
    weighted_f1_score,
)


def tiny_synth(**kw):
    defaults = dict(d_model=8, seq_len=4, d_uni=4, d_paired=4, n_train=64, n_val=32, n_test=32, seed=0)
    defaults.update(kw)
    return synth.SynthConfig(**defaults)


def tiny_train(**kw):
    defaults = dict(pretrain_epochs=2, joint_epochs=2, batch_size=16, n_blocks=1, n_heads=2, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_dataset():
    return synth.generate(tiny_synth())


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_train(pretrain_epochs=-1).validate()
    with pytest.raises(ValueError):
        tiny_train(lr_overall=0.0).validate()
    with pytest.raises(ValueError):
        tiny_train(gate_theta=1.5).validate()


def test_zero_epochs_is_noop(tiny_dataset):
    cfg = tiny_train(pretrain_epochs=0)
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    before = {k: t.data.copy() for k, t in flatten_params(model).items()}
    rows = pretrain(model, tiny_dataset, cfg)
    assert rows == []
    for k, t in flatten_params(model).items():
        assert np.array_equal(before[k], t.data)


def test_pretrain_determinism_bitwise(tiny_dataset):
    cfg = tiny_train()
    outs = []
    for _ in range(2):
        model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
        pretrain(model, tiny_dataset, cfg)
        outs.append({k: t.data.tobytes() for k, t in flatten_params(model).items()})
    assert outs[0] == outs[1]


def test_loss_rows_satisfy_stage_arithmetic(tiny_dataset):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    rows = pretrain(model, tiny_dataset, cfg)
    rows += train_joint(model, tiny_dataset, cfg, epoch_offset=len(rows))
    assert [r.epoch for r in rows] == list(range(1, len(rows) + 1))
    for row in rows:
        row.check(cfg.alpha, cfg.beta)


def test_alpha_zero_reduces_to_supervised(tiny_dataset):
    cfg = tiny_train(alpha=0.0)
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    rows = train_joint(model, tiny_dataset, cfg)
    for row in rows:
        assert abs(row.total - cfg.beta * row.task) < 1e-9


def test_adam_moves_only_params_with_grads():
    t_used = Tensor(np.ones(3), requires_grad=True)
    t_idle = Tensor(np.ones(3), requires_grad=True)
    opt = Adam({"used": t_used, "idle": t_idle}, lambda name: 0.1)
    t_used.grad = np.array([1.0, -1.0, 2.0])
    opt.step()
    assert not np.array_equal(t_used.data, np.ones(3))
    assert np.array_equal(t_idle.data, np.ones(3))


def test_per_module_learning_rates():
    cfg = tiny_train()
    lr = TR._lr_for(cfg)
    assert lr("uni_learner.0.wq") == cfg.lr_learners
    assert lr("paired_learner.1.ff1_w") == cfg.lr_learners
    assert lr("decoder.merge_w") == cfg.lr_decoder
    assert lr("partitioner.0.w_uni") == cfg.lr_overall
    assert lr("fusion.head_w") == cfg.lr_overall


def test_divergence_reports_op_and_location(tiny_dataset):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    model.partitioners[0]["w_uni"].data[0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train_joint(model, tiny_dataset, cfg)
    msg = str(exc.value)
    assert "matmul" in msg  # first op to touch the poisoned parameter
    assert "epoch=1" in msg and "stage=joint" in msg


def test_constant_predictor_metrics():
    truth = np.array([0, 1] * 10)
    pred = np.zeros(20, dtype=int)
    assert accuracy_score(pred, truth) == 0.5
    f1 = weighted_f1_score(pred, truth, 2)
    # one class gets F1 = 2/3, the other 0; supports are equal
    assert abs(f1 - 1 / 3) < 1e-12


def test_perfect_predictor_metrics():
    truth = np.array([0, 1, 1, 0])
    assert accuracy_score(truth, truth) == 1.0
    assert weighted_f1_score(truth, truth, 2) == 1.0
    stats = per_class_stats(truth, truth, 2)
    assert all(s["precision"] == 1.0 and s["recall"] == 1.0 for s in stats)


def test_evaluate_rejects_empty_split(tiny_dataset):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    empty = synth.Split(
        features=[np.zeros((0, 4, 8))] * 2,
        labels=np.zeros(0, dtype=np.int64),
        uni_latents=[np.zeros((0, 4))] * 2,
        paired_latents=[np.zeros((0, 4))] * 2,
    )
    broken = synth.SynthDataset(config=tiny_dataset.config, splits={**tiny_dataset.splits, "test": empty}, uni_dirs=tiny_dataset.uni_dirs)
    with pytest.raises(ValueError):
        evaluate(model, broken, "test", cfg)


def test_evaluate_produces_partition_table(tiny_dataset):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    rep = evaluate(model, tiny_dataset, "val", cfg)
    assert 0.0 <= rep.accuracy <= 1.0
    assert len(rep.partition_table) == 2
    for row in rep.partition_table:
        assert 0.0 <= row["percent_uni"] <= 100.0
        assert 1 <= row["cut_u"] <= 8


def test_param_report_counts(tiny_dataset):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    counts = module_param_counts(model)
    assert counts["encoder"] == 0
    assert counts["uni_learner"] == counts["paired_learner"] > 0
    module_sum = sum(v for k, v in counts.items() if k != "total")
    assert counts["total"] == module_sum


def test_ablation_flags_remove_modules_and_losses(tiny_dataset):
    scfg = tiny_dataset.config
    base_counts = module_param_counts(build_model(tiny_train().dims(scfg), 0))

    cfg = tiny_train(no_uni_learner=True)
    model = build_model(cfg.dims(scfg), cfg.seed)
    counts = module_param_counts(model)
    assert counts["uni_learner"] == 0 and counts["ufc_head"] == 0
    assert counts["paired_learner"] == base_counts["paired_learner"]
    rows = pretrain(model, tiny_dataset, cfg)
    assert all(r.ufc == 0.0 for r in rows)
    assert all(r.pfc > 0.0 for r in rows)

    cfg = tiny_train(no_paired_learner=True)
    model = build_model(cfg.dims(scfg), cfg.seed)
    counts = module_param_counts(model)
    assert counts["paired_learner"] == 0 and counts["pfc_head"] == 0
    rows = pretrain(model, tiny_dataset, cfg)
    assert all(r.pfc == 0.0 for r in rows)

    cfg = tiny_train(no_decoder=True)
    model = build_model(cfg.dims(scfg), cfg.seed)
    assert module_param_counts(model)["decoder"] == 0
    rows = pretrain(model, tiny_dataset, cfg)
    assert all(r.upr == 0.0 for r in rows)


def test_no_partitioner_collapses_to_concat_head(tiny_dataset):
    cfg = tiny_train(no_partitioner=True)
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    counts = module_param_counts(model)
    for module in ("partitioner", "uni_learner", "paired_learner", "decoder", "fusion"):
        assert counts[module] == 0
    assert counts["concat_head"] == (2 * 8 * 2 + 2)
    rows = train_joint(model, tiny_dataset, cfg)
    assert all(r.ufc == r.pfc == r.upr == 0.0 for r in rows)
    rep = evaluate(model, tiny_dataset, "test", cfg)
    assert rep.partition_table == []


def test_checkpoint_roundtrip_preserves_everything(tiny_dataset, tmp_path):
    cfg = tiny_train()
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    pretrain(model, tiny_dataset, cfg)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    orig, back = flatten_params(model), flatten_params(loaded)
    assert set(orig) == set(back)
    for k in orig:
        assert orig[k].data.tobytes() == back[k].data.tobytes()
    assert loaded.dims == model.dims


def test_checkpoint_files_byte_identical_across_runs(tiny_dataset, tmp_path):
    cfg = tiny_train()
    blobs = []
    for i in range(2):
        model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
        pretrain(model, tiny_dataset, cfg)
        path = tmp_path / f"ckpt{i}.bin"
        save_checkpoint(model, path)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_joint_stage_resumes_from_checkpoint_equivalently(tiny_dataset, tmp_path):
    cfg = tiny_train()
    straight = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    pretrain(straight, tiny_dataset, cfg)
    path = tmp_path / "stage1.bin"
    save_checkpoint(straight, path)
    resumed = load_checkpoint(path)
    train_joint(straight, tiny_dataset, cfg)
    train_joint(resumed, tiny_dataset, cfg)
    a, b = flatten_params(straight), flatten_params(resumed)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()


def test_ufc_true_labels_beat_shuffled_after_training(tiny_dataset):
    """Five pretraining epochs make the modality head at least as good on
    true modality assignments as on swapped ones."""
    from modalsplit.model import partition_features
    from modalsplit.objectives import ufc_loss

    # batch 4 gives the tiny dataset a step count per epoch comparable to
    # the default configuration, which the 5-epoch bound presumes
    cfg = tiny_train(pretrain_epochs=5, batch_size=4)
    model = build_model(cfg.dims(tiny_dataset.config), cfg.seed)
    pretrain(model, tiny_dataset, cfg)

    # the bound is guaranteed on the split the head was fitted to; the
    # modalities are exchangeable by construction, so held-out losses of
    # both labelings sit at chance
    train = tiny_dataset.splits["train"]
    feats = [Tensor(f) for f in train.features]
    _, per_iteration = partition_features(model, feats)
    b = train.n
    uni = [Tensor(per_iteration[-1]["uni"].data[m * b : (m + 1) * b]) for m in range(2)]
    true = ufc_loss(uni, model.ufc_head["w"], model.ufc_head["b"], modality_ids=[0, 1]).item()
    shuffled = ufc_loss(uni, model.ufc_head["w"], model.ufc_head["b"], modality_ids=[1, 0]).item()
    assert shuffled >= true - 1e-9


def test_concat_near_oracle_when_paired_signal_absent():
    """With no cross-modal term the task is linear in the pooled features,
    so the concat baseline approaches the oracle ceiling."""
    scfg = synth.SynthConfig(beta_paired=0.0, n_train=2048, seed=3)
    ds = synth.generate(scfg)
    cfg = TrainConfig(seed=3)
    params = TR._train_baseline("concat", ds, cfg)
    acc, _ = TR._eval_baseline("concat", params, ds, "test")
    oracle = synth.bayes_oracle(scfg, n_mc=20000)
    assert acc >= oracle.accuracy - 0.03


def test_run_benchmark_grid_complete(tiny_dataset):
    scfg = tiny_synth()
    cfg = tiny_train(pretrain_epochs=1, joint_epochs=1)
    rows = TR.run_benchmark(scfg, cfg, seeds=[0, 1], oracle_mc=10000)
    methods = [r["method"] for r in rows]
    assert methods == ["uni:0", "uni:1", "concat", "add", "max", "linear", "mlp", "modalsplit", "bayes_oracle"]
    for r in rows[:-1]:
        assert 0.0 <= r["accuracy_mean"] <= 1.0
        assert r["n_seeds"] == 2
    assert rows[-1]["accuracy_mean"] > 0.9
