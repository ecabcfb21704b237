"""Shared fixtures: the desk-scale study runs are computed once per session."""

import time

import numpy as np
import pytest

from chantwin.harness import studies
from chantwin.harness.config import scenario_defaults
from chantwin.harness.results import ResultWriter, read_results
from chantwin.nn import checkpoint
from chantwin.twin import dataset as dsio
from chantwin.twin.corrector import evaluate_cases, train_corrector

ACCEPTANCE = []


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


class StudyRun:
    """Channels, NMSE summary and BER rows of one desk-scale study."""

    def __init__(self, cfg, channels, rows, seconds, **extra):
        self.cfg = cfg
        self.channels = channels
        self.nmse = channels.nmse_db()
        self.rows = rows
        self.seconds = seconds
        self.__dict__.update(extra)

    def ber(self, variant, snr):
        (row,) = [r for r in self.rows if r.variant == variant and r.snr_db == snr]
        return row


def _sweep(cfg, channels, path):
    studies.run_ber_sweep(cfg, channels, ResultWriter(path))
    return read_results(path)


@pytest.fixture(scope="session")
def fidelity_run(tmp_path_factory):
    t = time.time()
    cfg = scenario_defaults("ray_count_study", desk=True)
    base = studies.base_scene(cfg)
    ch = studies.build_channels(cfg, base.route_points(cfg.positions), base=base)
    rows = _sweep(cfg, ch, tmp_path_factory.mktemp("fidelity") / "ber.csv")
    return StudyRun(cfg, ch, rows, time.time() - t)


@pytest.fixture(scope="session")
def material_run(tmp_path_factory):
    t = time.time()
    cfg = scenario_defaults("material_study")
    base = studies.base_scene(cfg)
    ch = studies.build_channels(cfg, base.route_points(cfg.positions), base=base)
    rows = _sweep(cfg, ch, tmp_path_factory.mktemp("material") / "ber.csv")
    return StudyRun(cfg, ch, rows, time.time() - t)


@pytest.fixture(scope="session")
def corrector_run(tmp_path_factory):
    t = time.time()
    work = tmp_path_factory.mktemp("corrector")
    cfg = scenario_defaults("corrector_study")
    base = studies.base_scene(cfg)
    built = studies.build_corrector_dataset(cfg, base)
    ds, _ = dsio.scale_dataset(built.dataset)
    dsio.save(ds, work / "scaled.ctwd")
    reports, models = {}, {}
    for kind in ("encoder_decoder", "mlp"):
        res = train_corrector(ds, cfg.corrector_config(), kind)
        checkpoint.save(res.model, work / f"{kind}.ctwm")
        models[kind] = res
        reports[kind] = evaluate_cases(ds, res.model)
    correctors = {"corrected": (models["encoder_decoder"].model, ds.meta.scale_factor),
                  "corrected-mlp": (models["mlp"].model, ds.meta.scale_factor)}
    positions = studies.held_out_positions(cfg, built.kept, base)
    ch = studies.build_channels(cfg, positions, correctors, base)
    rows = _sweep(cfg, ch, work / "ber.csv")
    return StudyRun(cfg, ch, rows, time.time() - t, dataset=ds, reports=reports, training=models)


def combined_se(a, b):
    return float(np.hypot(a.stderr, b.stderr))
