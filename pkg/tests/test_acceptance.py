"""Acceptance suite: end-to-end attack/defense behavior on a 10k corpus.

One test per criterion; the expensive experiment matrix (baselines, five
triggers on two models, both defenses) runs once in a module-scoped fixture
and is shared by the criteria that read it.
"""

import time
from dataclasses import dataclass, replace

import numpy as np
import pytest

from wadlab import autodiff as ad
from wadlab.cli import ATTACK_ROWS, DEFENSE_ROWS, main
from wadlab.corpus import GeneratorSpec, generate_synthetic
from wadlab.httptok import PAD_ID, build_vocab, encode_batch, tokenize
from wadlab.models import BiLSTMConfig, TextCNNConfig, init_model, make_config
from wadlab.neuralnet import finite_difference_check
from wadlab.pipeline import (
    CF_FT,
    NAIVE_FT,
    DefenseConfig,
    EdaConfig,
    TrainConfig,
    cf_ft_loss,
    evaluate,
    run_attack,
    run_defense,
    train_clean_baseline,
)
from wadlab.triggers import PoisonPlan, apply_trigger, build_attack_test_set, make_trigger

TRIGGERS = ("ISS", "ISE", "DBS", "HLR", "RFR")
THRESHOLDED = ("ISS", "DBS", "HLR", "RFR")  # ISE is recorded, not thresholded
CORPUS = GeneratorSpec(10_000, 0.4, seed=1)
VOCAB_SIZE = 2000
POISON_RATE = 0.05
POISON_SEED = 0
DEFENSE_SEED = 11
INPUT_LEN = 64  # covers every tokenized request in this corpus

TRAIN = {
    "textcnn": TrainConfig(batch_size=64, learning_rate=0.01, epochs=4,
                           input_length=INPUT_LEN, seed=2),
    "bilstm": TrainConfig(batch_size=64, learning_rate=0.01, epochs=3,
                          input_length=INPUT_LEN, seed=2),
}


def report(criterion, ok, detail=""):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"criterion {criterion} failed: {detail}"


@dataclass
class Case:
    kind: str
    trigger: str
    baseline: object     # Metrics of the clean model on this trigger's test set
    attacked: object     # Metrics of the poisoned model
    defended: dict       # method -> Metrics at r=1%
    defended_r10: object  # CF-FT Metrics at r=10% (ISS/DBS cases only)


@pytest.fixture(scope="module")
def lab():
    """Train everything once: 2 baselines, 10 attacks, 20+4 defense runs."""
    ds = generate_synthetic(CORPUS)
    baseline_time = {}
    baselines = {}
    for kind in ("textcnn", "bilstm"):
        t0 = time.monotonic()
        model, vocab, _ = train_clean_baseline(ds, kind, TRAIN[kind], VOCAB_SIZE)
        baseline_time[kind] = time.monotonic() - t0
        baselines[kind] = (model, vocab)

    cases = []
    all_metrics = []
    for kind in ("textcnn", "bilstm"):
        cfg = TRAIN[kind]
        base_model, base_vocab = baselines[kind]
        for tname in TRIGGERS:
            trig = make_trigger(tname, seed=POISON_SEED)
            attack_test, _ = build_attack_test_set(ds, trig)
            base_m = evaluate(base_model, ds.test, attack_test, base_vocab, INPUT_LEN)

            plan = PoisonPlan(rate=POISON_RATE, trigger=trig, seed=POISON_SEED)
            model, vocab, poisoned, manifest, _ = run_attack(
                ds, kind, plan, cfg, VOCAB_SIZE
            )
            att_m = evaluate(model, ds.test, attack_test, vocab, INPUT_LEN)

            defended = {}
            for method in (NAIVE_FT, CF_FT):
                dcfg = DefenseConfig(
                    method=method, ratio=0.01, domain="in", alpha=0.5,
                    eda=EdaConfig(seed=DEFENSE_SEED), seed=DEFENSE_SEED,
                )
                dmodel, _ = run_defense(model, poisoned, manifest, dcfg, cfg, vocab)
                defended[method] = evaluate(dmodel, ds.test, attack_test, vocab, INPUT_LEN)

            defended_r10 = None
            if tname in ("ISS", "DBS"):
                dcfg = DefenseConfig(
                    method=CF_FT, ratio=0.10, domain="in", alpha=0.5,
                    eda=EdaConfig(seed=DEFENSE_SEED), seed=DEFENSE_SEED,
                )
                dmodel, _ = run_defense(model, poisoned, manifest, dcfg, cfg, vocab)
                defended_r10 = evaluate(dmodel, ds.test, attack_test, vocab, INPUT_LEN)

            case = Case(kind, tname, base_m, att_m, defended, defended_r10)
            cases.append(case)
            all_metrics.extend([base_m, att_m, *defended.values()])
            if defended_r10 is not None:
                all_metrics.append(defended_r10)

    return {
        "dataset": ds,
        "baselines": baselines,
        "baseline_time": baseline_time,
        "cases": cases,
        "all_metrics": all_metrics,
    }


# --- criterion 1: gradient oracle --------------------------------------------


def test_criterion_1_gradient_oracle():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    reports = {}

    for name, cfg in (
        ("textcnn", TextCNNConfig(vocab_size=20, embed_dim=6,
                                  filter_widths=(2, 3), filters_per_width=4)),
        ("bilstm", BiLSTMConfig(vocab_size=20, embed_dim=6, hidden_size=5)),
    ):
        model = init_model(cfg, seed=0)
        ids = rng.integers(1, 20, size=(3, 8))
        ids[0, 5:] = PAD_ID
        labels = np.array([0, 1, 0])

        def loss_value():
            out = model.forward(ids)
            return float(ad.softmax_cross_entropy(out.logits, labels).data)

        model.zero_grads()
        ad.softmax_cross_entropy(model.forward(ids).logits, labels).backward()
        reports[name] = finite_difference_check(
            loss_value, model.param_arrays(), model.grads(),
            tolerance=1e-3, max_coords=25,
        )

    # cf_ft_loss at the three weighting endpoints, with a frozen perturbation
    # stream so the loss is a deterministic function of the parameters.
    texts = ["/site/a.php?id=1' union select name from users--",
             "/cart/b.html?msg=<script>alert(7)</script>",
             "/account/login.php?username=bob12&session=99"]
    vocab = build_vocab([tokenize(t) for t in texts], 50)
    tokens = [tokenize(t) for t in texts]
    labels = np.array([1, 1, 0])
    eda = EdaConfig(seed=0)
    for alpha in (0.0, 0.5, 1.0):
        model = init_model(make_config("textcnn", vocab.size, 12), seed=1)

        def loss_value():
            total, _, _ = cf_ft_loss(model, tokens, labels, alpha, eda,
                                     np.random.default_rng(3), vocab, 24)
            return float(total.data)

        model.zero_grads()
        total, _, _ = cf_ft_loss(model, tokens, labels, alpha, eda,
                                 np.random.default_rng(3), vocab, 24)
        total.backward()
        reports[f"cf_ft alpha={alpha}"] = finite_difference_check(
            loss_value, model.param_arrays(), model.grads(),
            tolerance=1e-3, max_coords=25,
        )

    elapsed = time.monotonic() - t0
    worst = max(r.max_rel_err for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 120
    report(1, ok, f"(max rel err {worst:.2e}, {elapsed:.1f}s)")


# --- criterion 2: clean baselines ---------------------------------------------


def test_criterion_2_clean_baseline(lab):
    details = []
    ok = True
    for kind, (model, vocab) in lab["baselines"].items():
        ds = lab["dataset"]
        attack_test, _ = build_attack_test_set(ds, make_trigger("ISE"))
        m = evaluate(model, ds.test, attack_test, vocab, INPUT_LEN)
        elapsed = lab["baseline_time"][kind]
        details.append(f"{kind}: C-ACC {m.c_acc:.2f} in {TRAIN[kind].epochs} "
                       f"epochs, {elapsed:.0f}s")
        ok &= m.c_acc >= 95.0 and TRAIN[kind].epochs <= 30 and elapsed < 600
    report(2, ok, "(" + "; ".join(details) + ")")


# --- criterion 3: attack reproduction ------------------------------------------


def test_criterion_3_attack_reproduction(lab):
    ok = True
    details = []
    for case in lab["cases"]:
        line = (f"{case.kind}/{case.trigger}: ASR {case.attacked.asr:.1f}, "
                f"C-ACC {case.attacked.c_acc:.1f}")
        details.append(line)
        if case.trigger in THRESHOLDED:
            ok &= case.attacked.asr >= 80.0
            ok &= abs(case.attacked.c_acc - case.baseline.c_acc) <= 3.0
    report(3, ok, "(" + "; ".join(details) + ")")


# --- criterion 4: metrics identity ---------------------------------------------


def test_criterion_4_metrics_identity(lab):
    ok = all(m.asr + m.r_acc == 100.0 for m in lab["all_metrics"])
    report(4, ok, f"({len(lab['all_metrics'])} evaluations checked, exact)")


# --- criterion 5: trigger golden tests -----------------------------------------


def test_criterion_5_trigger_goldens():
    base = (
        "/string/strings/parameters=1,(select (case when (8392=8404) then 1 "
        "else 8392 * (select 8392 from information_schema.character_sets) end))"
    )
    rng = np.random.default_rng(0)
    expected = {
        "ISS": (
            "/ string / strings / parameters = 1 , ( select ( case when ( 8392 "
            "= an apple a day 8404 ) then 1 else 8392 * ( select 8392 from "
            "information_schema . character_sets ) end ) )"
        ),
        "ISE": base + "\r\n\r\n",
        "DBS": base[1:],
        "HLR": (
            "/sτring/strings/parameters=1,(select (case when (8392=8404) then "
            "1 else 8392 * (select 8392 from information_schema.character_sets) end))"
        ),
        "RFR": (
            "/string&strings&parameters=1,(select (case when (8392=8404) then "
            "1 else 8392 * (select 8392 from information_schema.character_sets) end))"
        ),
    }
    ok = True
    for name, want in expected.items():
        cfg = make_trigger(name, iss_position=17) if name == "ISS" else make_trigger(name)
        got, applied = apply_trigger(base, cfg, rng)
        ok &= applied and got == want
    report(5, ok, "(5 transforms byte-exact)")


# --- criterion 6: defense efficacy ---------------------------------------------


def test_criterion_6_defense_efficacy(lab):
    eligible = [c for c in lab["cases"] if c.attacked.asr >= 85.0]
    assert eligible, "no attack case reached ASR >= 85"
    ok = True
    wins = 0
    details = []
    for c in eligible:
        naive, cf = c.defended[NAIVE_FT], c.defended[CF_FT]
        d_naive = c.attacked.asr - naive.asr
        d_cf = c.attacked.asr - cf.asr
        ok &= d_cf >= 30.0
        ok &= d_naive > 0.0
        ok &= abs(cf.c_acc - c.attacked.c_acc) <= 5.0
        ok &= abs(naive.c_acc - c.attacked.c_acc) <= 5.0
        wins += d_cf >= d_naive
        details.append(f"{c.kind}/{c.trigger}: dASR naive {d_naive:.1f} cf {d_cf:.1f}")
    frac = wins / len(eligible)
    ok &= frac >= 0.70
    report(6, ok, f"(CF-FT >= naive-FT in {wins}/{len(eligible)}; " + "; ".join(details) + ")")


# --- criterion 7: ratio sweep property ------------------------------------------


def test_criterion_7_ratio_sweep(lab):
    cases = [c for c in lab["cases"] if c.trigger in ("ISS", "DBS")]
    assert len(cases) == 4 and all(c.defended_r10 is not None for c in cases)
    acc_r1 = np.mean([c.defended[CF_FT].c_acc for c in cases])
    acc_r10 = np.mean([c.defended_r10.c_acc for c in cases])
    dasr_r1 = np.mean([c.attacked.asr - c.defended[CF_FT].asr for c in cases])
    dasr_r10 = np.mean([c.attacked.asr - c.defended_r10.asr for c in cases])
    ok = acc_r10 >= acc_r1 and dasr_r10 >= dasr_r1
    report(7, ok, f"(C-ACC {acc_r1:.2f}->{acc_r10:.2f}, dASR {dasr_r1:.2f}->{dasr_r10:.2f})")


# --- criterion 8: loss-weight endpoint equivalence -------------------------------


def test_criterion_8_endpoint_equivalence():
    ds = generate_synthetic(GeneratorSpec(400, 0.4, seed=6))
    cfg = TrainConfig(batch_size=16, epochs=2, input_length=48, seed=0)
    plan = PoisonPlan(rate=0.05, trigger=make_trigger("ISE"), seed=0)
    model, vocab, poisoned, manifest, _ = run_attack(ds, "textcnn", plan, cfg, 500, 12)

    ok = True
    for alpha, arm in ((1.0, "ORG"), (0.0, "EMD")):
        traces = []
        for _ in range(2):
            dcfg = DefenseConfig(method=CF_FT, ratio=0.1, domain="in",
                                 alpha=alpha, eda=EdaConfig(seed=3), seed=3)
            assert dcfg.arm_name == arm
            _, trace = run_defense(model, poisoned, manifest, dcfg, cfg, vocab)
            traces.append(trace)
        ok &= traces[0] == traces[1]  # bitwise-equal float lists
    report(8, ok, "(ORG and EMD arm traces bitwise equal)")


# --- criterion 9: CLI determinism -------------------------------------------------


def test_criterion_9_cli_determinism(tmp_path):
    config = tmp_path / "config.ini"
    config.write_text(
        "[dataset]\nn_samples = 200\nattack_fraction = 0.4\nseed = 4\n"
        "[model]\nkinds = textcnn\nhidden_size = 12\n"
        "[train]\nbatch_size = 16\nepochs = 2\ninput_length = 48\n"
        "vocab_size = 400\nseed = 1\n"
        "[attack]\ntriggers = ISE,DBS\npoison_rate = 0.05\nseed = 0\n"
        "[defense]\narms = naive-FT:in,CF-FT:in\nratio = 0.1\nalpha = 0.5\nseed = 2\n",
        encoding="utf-8",
    )
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["attack", "--config", str(config), "--out", str(out)]) == 0
        assert main(["defend", "--config", str(config), "--dir", str(out)]) == 0
        outputs.append(((out / ATTACK_ROWS).read_bytes(),
                        (out / DEFENSE_ROWS).read_bytes()))
    ok = outputs[0] == outputs[1]
    report(9, ok, "(attack and defense row CSVs byte-identical across reruns)")


# --- criterion 10: tokenizer/encoder fuzz ------------------------------------------


def test_criterion_10_tokenizer_fuzz():
    ds = generate_synthetic(GeneratorSpec(500, 0.4, seed=12))
    samples = ds.train + ds.test + ds.dev
    assert len(samples) == 500
    texts = [s.text for s in samples]
    # Exercise triggered variants too (homoglyphs, CRLF suffix, re-spacing).
    rng = np.random.default_rng(0)
    for name in TRIGGERS:
        cfg = make_trigger(name)
        texts.extend(apply_trigger(s.text, cfg, rng)[0] for s in samples[:50])

    ok = True
    for text in texts:
        toks = tokenize(text)
        ok &= tokenize(" ".join(toks)) == toks

    vocab = build_vocab((tokenize(t) for t in texts), VOCAB_SIZE)
    L = 48
    ids = encode_batch([tokenize(t) for t in texts], vocab, L)
    ok &= ids.shape == (len(texts), L)

    model = init_model(make_config("textcnn", vocab.size, 12), seed=0)
    lstm = init_model(make_config("bilstm", vocab.size, 12), seed=0)
    extended = np.concatenate([ids, np.full((ids.shape[0], 16), PAD_ID)], axis=1)
    for m in (model, lstm):
        for lo in range(0, len(texts), 250):
            a = m.forward(ids[lo : lo + 250]).logits.data
            b = m.forward(extended[lo : lo + 250]).logits.data
            ok &= np.array_equal(a, b)
    report(10, ok, f"({len(texts)} texts: re-space idempotence, exact length, "
                   "PAD-append invariance)")
