"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import erfc

from chantwin import ofdm
from chantwin.harness import cli, studies
from chantwin.harness.config import DESK_TIERS, scenario_defaults
from chantwin.harness.plot import emit_plot
from chantwin.harness.results import ResultWriter, parse_results
from chantwin.nn import LayerSpec, Model, checkpoint, encoder_decoder_specs, gradcheck
from chantwin.precoding import make_precoder
from chantwin.ray.materials import Material
from chantwin.ray.physics import fresnel_reflection, knife_edge_loss_db
from chantwin.ray.scene import demo_scene_path, dumps_scene, loads_scene
from chantwin.twin import dataset as dsio
from chantwin.twin.corrector import evaluate_cases, nmse, train_corrector

from conftest import combined_se, record

pytestmark = pytest.mark.acceptance


def check(name, ok, detail):
    record(name, ok, detail)
    assert ok, f"{name}: {detail}"


def qfunc(x):
    return 0.5 * erfc(x / math.sqrt(2))


# --------------------------------------------------------------------------


def test_exactness_suite():
    t = time.time()
    rng = np.random.default_rng(2024)
    cfg = ofdm.OfdmConfig()
    failures = []
    # zero-noise genie BER
    for trial in range(20):
        eta = int(rng.integers(1, cfg.cp_length + 2))
        taps = rng.standard_normal((4, eta)) + 1j * rng.standard_normal((4, eta))
        cfr = ofdm.cir_to_cfr(taps, cfg.subcarriers)
        for mode in ("mrt", "mmse"):
            for norm in ("paper_literal", "unit_power"):
                w = make_precoder(mode, cfr, norm, 10.0).weights
                err, n = ofdm.simulate_link(taps, w, cfg, None, 10, rng)
                if err:
                    failures.append(f"genie BER {err}/{n} ({mode}, {norm}, eta={eta})")
    # Y_k = H_eff,k S_k through the time-domain chain
    worst_cp = 0.0
    for eta in range(1, cfg.cp_length + 2):
        taps = rng.standard_normal((4, eta)) + 1j * rng.standard_normal((4, eta))
        b = rng.standard_normal((128, 4)) + 1j * rng.standard_normal((128, 4))
        s = ofdm.map_bits(rng.integers(0, 2, 256), "qpsk")
        y = ofdm.ofdm_demodulate(ofdm.apply_channel(ofdm.ofdm_modulate(s[None, :] * b.T, cfg), taps), cfg)
        h_eff = np.sum(b * ofdm.cir_to_cfr(taps, 128), axis=1)
        worst_cp = max(worst_cp, float(np.max(np.abs(y - h_eff * s))))
    if worst_cp > 1e-9:
        failures.append(f"CP/FFT residual {worst_cp:.2e}")
    # Parseval, time domain body vs grid and CIR vs CFR
    s = rng.standard_normal(128) + 1j * rng.standard_normal(128)
    x = ofdm.ofdm_modulate(s, cfg)
    parseval = abs(np.sum(np.abs(x[cfg.cp_length:]) ** 2) - np.sum(np.abs(s) ** 2))
    h = rng.standard_normal((4, 17)) + 1j * rng.standard_normal((4, 17))
    parseval = max(parseval, abs(np.sum(np.abs(ofdm.cir_to_cfr(h, 128)) ** 2) - 128 * np.sum(np.abs(h) ** 2)))
    if parseval > 1e-9:
        failures.append(f"Parseval residual {parseval:.2e}")
    # Fresnel at normal incidence, lossless eps_r = 4
    m = Material("lossless4", 4.0, 0.0, 0.0, 0.0)
    for pol in ("TE", "TM"):
        r = fresnel_reflection(m, 0.0, 1e9, pol)
        if abs(r - (-1.0 / 3.0)) > 1e-15:
            failures.append(f"Fresnel {pol} {r}")
    loss = knife_edge_loss_db(0.0)
    if abs(loss - 6.02) > 0.01:
        failures.append(f"knife-edge loss {loss}")
    dt = time.time() - t
    check("exactness suite", not failures and dt < 60,
          "; ".join(failures) or f"CP residual {worst_cp:.1e}, Parseval {parseval:.1e}, "
                                  f"knife-edge {loss:.4f} dB, {dt:.1f} s")


def test_analytic_ber_oracle():
    t = time.time()
    cfg = ofdm.OfdmConfig()
    frames = math.ceil(1e6 / (cfg.subcarriers * 2))
    details, ok = [], True
    for snr_db in (0, 4, 8, 12):
        snr = 10 ** (snr_db / 10)
        err, n = ofdm.simulate_link([[1.0]], np.ones((cfg.subcarriers, 1)), cfg, ofdm.NoiseConfig(snr), frames,
                                    rng=np.random.default_rng([77, snr_db]))
        p = qfunc(math.sqrt(snr))
        se = math.sqrt(p * (1 - p) / n)
        z = (err / n - p) / se
        ok &= abs(z) < 3 and n >= 1e6
        details.append(f"{snr_db} dB z={z:+.2f}")
    dt = time.time() - t
    check("analytic BER oracle", ok and dt < 300, ", ".join(details) + f", {dt:.1f} s")


def test_precoder_identity():
    t = time.time()
    rng = np.random.default_rng(5)
    cfg = ofdm.OfdmConfig(subcarriers=8, cp_length=2)
    worst, mismatched = 0.0, 0
    for _ in range(1000):
        taps = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        h = ofdm.cir_to_cfr(taps, cfg.subcarriers)
        power = float(10 ** rng.uniform(-1, 3))
        a = make_precoder("mrt", h, "unit_power", power).weights
        b = make_precoder("mmse", h, "unit_power", power).weights
        worst = max(worst, float(np.max(np.abs(a - b))))
        seed = int(rng.integers(2 ** 31))
        noise = ofdm.NoiseConfig(power)
        bits_a = _decisions(taps, a, cfg, noise, seed)
        bits_b = _decisions(taps, b, cfg, noise, seed)
        mismatched += int(not np.array_equal(bits_a, bits_b))
    dt = time.time() - t
    check("precoder identity", worst <= 1e-12 and mismatched == 0 and dt < 60,
          f"max |MRT - MMSE| {worst:.1e}, {mismatched} channels with differing decisions, {dt:.1f} s")


def _decisions(taps, w, cfg, noise, seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=4 * cfg.subcarriers * 2, dtype=np.uint8)
    s = ofdm.map_bits(bits).reshape(4, cfg.subcarriers)
    y = ofdm.apply_channel(ofdm.ofdm_modulate(s[:, None, :] * w.T[None], cfg), taps, noise, rng=rng,
                           cp_length=cfg.cp_length)
    h_eff = np.sum(w * ofdm.cir_to_cfr(taps, cfg.subcarriers), axis=1)
    s_hat, _ = ofdm.zf_equalize(ofdm.ofdm_demodulate(y, cfg), h_eff[None, :])
    return ofdm.demap_symbols(s_hat)


def test_gradient_soundness():
    t = time.time()
    cases = {
        "conv1d": ([LayerSpec("conv1d", 3, 3, 1)], (2, 8)),
        "conv1d stride 2": ([LayerSpec("conv1d", 3, 3, 2)], (2, 8)),
        "conv1d_transpose": ([LayerSpec("conv1d_transpose", 3, 3, 2)], (2, 5)),
        "batchnorm": ([LayerSpec("conv1d", 3, 3, 1), LayerSpec("batchnorm")], (2, 6)),
        "relu": ([LayerSpec("conv1d", 3, 3, 1), LayerSpec("relu")], (2, 6)),
        "dense": ([LayerSpec("dense", output_width=4)], (2, 3)),
    }
    errs = {}
    for name, (specs, shape) in cases.items():
        m = Model(specs, shape, seed=11)
        x = np.random.default_rng(1).standard_normal((5,) + shape)
        errs[name] = max(gradcheck(m, x, eps=1e-5, mode=mode, check_input=True) for mode in ("train", "infer"))
    full = Model(encoder_decoder_specs(5, 5, (16, 32, 64, 128), 3, seq_len=16, out_channels=2), (2, 16), seed=3)
    x = np.random.default_rng(4).standard_normal((8, 2, 16))
    errs["encoder-decoder L_e=L_d=5"] = gradcheck(full, x, eps=1e-5, max_per_tensor=40, check_input=True)
    worst = max(errs.values())
    dt = time.time() - t
    check("gradient soundness", worst < 1e-4 and dt < 300,
          f"max relative error {worst:.1e} over {len(errs)} cases, {dt:.1f} s")


def test_fidelity_ordering(fidelity_run):
    run = fidelity_run
    tiers = list(DESK_TIERS)
    values = [run.nmse[f"twin-{t}"] for t in tiers]
    nmse_ok = all(b <= a for a, b in zip(values, values[1:]))
    gaps_ok, gaps = True, []
    for p in run.cfg.precoders:
        genie = run.ber(f"genie/{p}", 20.0)
        rows = [run.ber(f"twin-{t}/{p}", 20.0) for t in tiers]
        gap = [r.ber - genie.ber for r in rows]
        for (ra, ga), (rb, gb) in zip(zip(rows, gap), zip(rows[1:], gap[1:])):
            se = math.sqrt(ra.stderr ** 2 + rb.stderr ** 2 + 2 * genie.stderr ** 2)
            gaps_ok &= gb <= ga + 3 * se
        gaps.append(f"{p} " + "/".join(f"{g:.1e}" for g in gap))
    check("fidelity ordering", nmse_ok and gaps_ok and run.seconds < 1800,
          "NMSE " + " >= ".join(f"{v:.2f}" for v in values) + " dB; BER gap at 20 dB " + "; ".join(gaps)
          + f"; {run.seconds:.0f} s")


def test_material_study(material_run):
    run = material_run
    names = ["twin-MC1", "twin-MC2", "twin-MC3"]
    lowest = min(names, key=run.nmse.get)
    pair = {}
    est = run.channels.estimates
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ref = est[a].reshape(-1, est[a].shape[-1])
            pair[(a, b)] = float(np.mean(nmse(ref, est[b].reshape(ref.shape))))
    distinct = all(v > -30 for v in pair.values())
    check("material study", lowest == "twin-MC1" and distinct and run.seconds < 900,
          ", ".join(f"{n[5:]} {run.nmse[n]:.2f} dB" for n in names)
          + "; pairwise " + ", ".join(f"{v:.1f}" for v in pair.values()) + f" dB; {run.seconds:.0f} s")


def test_corrector_efficacy(corrector_run):
    run = corrector_run
    ed, mlp = run.reports["encoder_decoder"], run.reports["mlp"]
    gap_ok = ed.case2 <= ed.case1 - 10.0
    order_ok = ed.case2 <= mlp.case2
    ber_ok, worst = True, []
    for snr in run.cfg.snr_db:
        if snr < 10:
            continue
        c, tw = run.ber("corrected/mmse", snr), run.ber("twin-HF/mmse", snr)
        ok = c.ber <= tw.ber + 3 * combined_se(c, tw)
        ber_ok &= ok
        worst.append(f"{snr:g}:{c.ber:.1e}/{tw.ber:.1e}")
    n_train = int(run.dataset.train_mask().sum())
    size_ok = run.dataset.meta.realizations >= 10000
    check("corrector efficacy", gap_ok and order_ok and ber_ok and size_ok and run.seconds < 2700,
          f"{run.dataset.meta.realizations} realizations ({n_train} train); Case 1 {ed.case1:.2f} dB, "
          f"Case 2 ED {ed.case2:.2f} dB (gap {ed.case1 - ed.case2:.2f}), MLP {mlp.case2:.2f} dB; "
          f"BER corrected/twin-HF {' '.join(worst)}; {run.seconds:.0f} s")


def test_determinism_and_persistence(tmp_path):
    t = time.time()
    cfg = scenario_defaults("corrector_study", desk=True)
    cfg.dataset_positions, cfg.positions, cfg.reference_rays = 60, 4, 20000
    cfg.tiers = {"HF": 2000}
    cfg.snr_db, cfg.bits_per_point = [5.0, 10.0], 20000
    cfg.corrector = dict(cfg.corrector, epochs=3, channels=[4, 8, 8, 8], batches_per_epoch=None)

    def run(d):
        d.mkdir()
        built = studies.build_corrector_dataset(cfg)
        ds, _ = dsio.scale_dataset(built.dataset)
        dsio.save(ds, d / "ds.ctwd")
        model = train_corrector(ds, cfg.corrector_config(), "encoder_decoder").model
        checkpoint.save(model, d / "ed.ctwm")
        ch = studies.build_channels(cfg, studies.held_out_positions(cfg, built.kept),
                                    {"corrected": (model, ds.meta.scale_factor)})
        studies.run_ber_sweep(cfg, ch, ResultWriter(d / "ber.csv"))
        (d / "ber.svg").write_text(emit_plot((d / "ber.csv").read_text()))
        rep = cli.format_report(evaluate_cases(ds, model))[0]
        (d / "nmse.csv").write_text(rep)
        return d

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    names = ["ds.ctwd", "ed.ctwm", "ber.csv", "ber.svg", "nmse.csv"]
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    # round trips
    ds_bytes = (a / "ds.ctwd").read_bytes()
    trips = {
        "dataset": dsio.dumps(dsio.loads(ds_bytes)) == ds_bytes,
        "checkpoint": checkpoint.dumps(checkpoint.loads((a / "ed.ctwm").read_bytes())) == (a / "ed.ctwm").read_bytes(),
        "csv": "".join(r.to_line() for r in parse_results((a / "ber.csv").read_text()))
        == (a / "ber.csv").read_text().split("\n", 2)[2],
        "scene": dumps_scene(loads_scene(dumps_scene(loads_scene(open(demo_scene_path()).read()))))
        == dumps_scene(loads_scene(open(demo_scene_path()).read())),
        "config": type(cfg).from_dict(cfg.to_dict()).dumps() == cfg.dumps(),
    }
    dt = time.time() - t
    check("determinism and persistence", len(same) == len(names) and all(trips.values()) and dt < 300,
          f"identical: {', '.join(same)}; round trips: "
          + ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in trips.items()) + f"; {dt:.0f} s")
