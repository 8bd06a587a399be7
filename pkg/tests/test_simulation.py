from pathlib import Path

import numpy as np
import pytest

from app.core.errors import ConfigError
from app.schemas.scenario import TargetSpec
from app.services import tracking_predictor
from app.services.metrics_design import bpsk_theoretical_ber, snr_at_ber
from app.services.results_writer import records_frame
from app.services.scenario_loader import load_scenario
from app.services.simulation import (
    LinkContext,
    build_scene,
    design_for_scenario,
    noise_powers,
    pilot_layout,
    run_ideal,
    run_pilot_baseline,
    run_proposed,
    run_simulation,
    sense_targets,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scheme_ber(records, scheme, snr_db=None):
    chosen = [r for r in records if r.scheme == scheme and (snr_db is None or r.snr_db == snr_db)]
    return sum(r.bit_errors for r in chosen) / sum(r.bits_sent for r in chosen)


def test_records_cover_every_block(scenario_factory):
    cfg = scenario_factory()
    records = run_simulation(cfg)
    assert len(records) == 3 * len(cfg.snr_grid_db) * cfg.trials * cfg.blocks_per_trial
    assert records == sorted(records, key=lambda r: r.sort_key)
    for record in records:
        assert 0 <= record.l_hat < cfg.M and 0 <= record.k_hat < cfg.N
        assert record.bit_errors <= record.bits_sent


def test_runs_are_reproducible(scenario_factory):
    cfg = scenario_factory()
    assert records_frame(run_simulation(cfg)).equals(records_frame(run_simulation(cfg)))


def test_worker_count_does_not_change_results(scenario_factory):
    cfg = scenario_factory(trials=4)
    assert records_frame(run_simulation(cfg, workers=1)).equals(records_frame(run_simulation(cfg, workers=3)))


def test_seed_changes_results(scenario_factory):
    first = run_simulation(scenario_factory(seed=1), schemes=["ideal"])
    second = run_simulation(scenario_factory(seed=2), schemes=["ideal"])
    assert [r.bit_errors for r in first] != [r.bit_errors for r in second]


def test_noiseless_link_is_error_free(scenario_factory):
    cfg = scenario_factory(snr_grid_db=[float("inf")], blocks_per_trial=10)
    records = run_simulation(cfg)
    assert all(r.bit_errors == 0 for r in records)
    pilot = [r for r in records if r.scheme == "pilot"]
    assert all(r.bits_sent == cfg.M * cfg.N - 25 for r in pilot)
    proposed = [r for r in records if r.scheme == "proposed"]
    assert all((r.l_hat, r.k_hat) == (r.l_true, r.k_true) for r in proposed)


def test_noiseless_proposed_link_on_exact_grid(scenario_factory):
    cfg = scenario_factory(snr_grid_db=[float("inf")], blocks_per_trial=10, exact_grid=True)
    assert all(r.bit_errors == 0 for r in run_proposed(cfg))


def test_ideal_ber_follows_bpsk_theory(scenario_factory):
    cfg = scenario_factory(snr_grid_db=[6.0], trials=40, blocks_per_trial=20)
    records = run_ideal(cfg)
    sent = sum(r.bits_sent for r in records)
    expected = float(bpsk_theoretical_ber(10**0.6))
    sigma = np.sqrt(expected * (1 - expected) / sent)
    assert sent >= 100000
    assert abs(scheme_ber(records, "ideal") - expected) <= 3 * sigma


def test_scheme_ordering(scenario_factory):
    cfg = scenario_factory(snr_grid_db=[4.0], trials=10, blocks_per_trial=10)
    records = run_simulation(cfg)
    ideal, proposed, pilot = (scheme_ber(records, scheme) for scheme in ("ideal", "proposed", "pilot"))
    assert ideal - 1e-3 <= proposed <= ideal + 2e-3
    assert proposed < pilot


def test_proposed_tracker_folds_in_every_echo(monkeypatch, scenario_factory):
    calls = {"localize": 0, "velocity": 0}
    localize_impl, velocity_impl = tracking_predictor.localize, tracking_predictor.estimate_velocity

    def counted_localize(*args):
        calls["localize"] += 1
        return localize_impl(*args)

    def counted_velocity(*args):
        calls["velocity"] += 1
        return velocity_impl(*args)

    monkeypatch.setattr(tracking_predictor, "localize", counted_localize)
    monkeypatch.setattr(tracking_predictor, "estimate_velocity", counted_velocity)
    cfg = scenario_factory(snr_grid_db=[6.0], trials=1, blocks_per_trial=5)
    run_proposed(cfg)
    assert calls["localize"] >= 5
    assert calls["velocity"] >= 5


def test_proposed_reports_the_sensed_angle(scenario_factory):
    records = run_proposed(scenario_factory(snr_grid_db=[6.0], trials=2, blocks_per_trial=5))
    # Sensed angles sit on the 1 degree sweep grid; the target does not
    assert all(abs(r.theta_hat_deg - round(r.theta_hat_deg)) < 1e-6 for r in records)
    assert all(r.theta_hat_deg != r.theta_true_deg for r in records)
    assert all(abs(r.theta_hat_deg - r.theta_true_deg) <= 5.0 for r in records)


def test_proposed_suffers_when_the_echo_is_buried(scenario_factory):
    weak = scenario_factory(snr_grid_db=[4.0], trials=4, blocks_per_trial=10, sensing_snr_offset_db=-30.0)
    records = run_simulation(weak, schemes=["ideal", "proposed"])
    assert scheme_ber(records, "proposed") > scheme_ber(records, "ideal") + 0.05
    strong = scenario_factory(snr_grid_db=[4.0], trials=4, blocks_per_trial=10)
    assert scheme_ber(run_proposed(strong), "proposed") < scheme_ber(records, "proposed")


def test_single_scheme_runners(scenario_factory):
    cfg = scenario_factory(trials=1, blocks_per_trial=2)
    assert {r.scheme for r in run_pilot_baseline(cfg)} == {"pilot"}
    assert {r.scheme for r in run_proposed(cfg)} == {"proposed"}


def test_pilot_guard_must_fit_grid(scenario_factory):
    cfg = scenario_factory(pilot_max_delay=8)
    with pytest.raises(ConfigError, match="pilot guard region"):
        run_simulation(cfg)
    assert run_simulation(cfg, schemes=["ideal"])


def test_pilot_layout(scenario_factory):
    layout = pilot_layout(scenario_factory())
    assert (layout.l_p, layout.k_p) == (2, 4)
    assert layout.n_data == 16 * 8 - 25
    assert layout.guard[layout.l_p, layout.k_p]
    total = layout.pilot_amplitude**2 + layout.n_data * layout.data_amplitude**2
    assert total == pytest.approx(0.8 * 16 * 8)


def test_scenario_needs_a_ue(scenario_factory):
    cfg = scenario_factory(targets=[TargetSpec(position=(0.0, 500.0), is_ue=False)])
    with pytest.raises(ConfigError, match="no UE target"):
        run_simulation(cfg)


def test_scene_is_seeded_per_trial(scenario_factory):
    cfg = scenario_factory()
    first, again, other = build_scene(cfg, 0), build_scene(cfg, 0), build_scene(cfg, 1)
    assert np.array_equal(first[0][0].velocity, again[0][0].velocity)
    assert not np.array_equal(first[0][0].velocity, other[0][0].velocity)
    target = first[0][0]
    assert 10.0 <= np.linalg.norm(target.velocity) <= 15.0
    # Default heading is a radial approach
    assert target.radial_velocity == pytest.approx(np.linalg.norm(target.velocity))


def test_exact_grid_snaps_delay_to_bin_centre(scenario_factory):
    cfg = scenario_factory(exact_grid=True)
    target, _ = build_scene(cfg, 0)[0]
    bins = target.range / cfg.c * cfg.M * cfg.delta_f
    assert bins == pytest.approx(round(bins), abs=1e-9)


def test_normalized_noise_powers(scenario_factory):
    cfg = scenario_factory(sensing_snr_offset_db=-10.0)
    ctx = LinkContext.from_config(cfg, beams=1)
    target, _ = build_scene(cfg, 0)[0]
    n0_low, n0_s_low = noise_powers(cfg, ctx, target, 0.0)
    n0_high, n0_s_high = noise_powers(cfg, ctx, target, 10.0)
    assert n0_low == pytest.approx(10 * n0_high)
    assert n0_s_low == pytest.approx(10 * n0_s_high)
    assert noise_powers(cfg, ctx, target, float("inf")) == (0.0, 0.0)


def test_link_budget_noise_powers(scenario_factory):
    cfg = scenario_factory(snr_mode="link_budget", tx_power_dbm=30.0)
    ctx = LinkContext.from_config(cfg, beams=1)
    target, _ = build_scene(cfg, 0)[0]
    assert noise_powers(cfg, ctx, target, 20.0) == pytest.approx((0.01, 0.01))


def test_sensing_report(scenario_factory):
    cfg = scenario_factory(
        targets=[
            TargetSpec(position=(600.0, 2400.0)),
            TargetSpec(position=(-1500.0, 2600.0), is_ue=False, rcs=50.0),
        ]
    )
    report = sense_targets(cfg, snr_db=20.0)
    assert report.snr_db == 20.0
    assert [t.is_ue for t in report.targets] == [True, False]
    for target in report.targets:
        assert (target.l_hat, target.k_hat) == (target.l_true, target.k_true)
        assert abs(target.range_hat_m - target.range_true_m) <= report.range_resolution_m
        assert target.crb_h is None or target.crb_h > 0
    assert report.range_resolution_m == pytest.approx(cfg.c / (2 * cfg.M * cfg.delta_f))


def test_sensing_report_defaults_to_best_snr(scenario_factory):
    assert sense_targets(scenario_factory()).snr_db == 6.0


def test_design_for_scenario(scenario_factory):
    cfg = scenario_factory()
    result = design_for_scenario(cfg, float("inf"))
    assert result.blend == 0.0
    assert len(result.power_allocation) == cfg.M * cfg.N
    assert np.mean(result.power_allocation) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        design_for_scenario(cfg, 1.0, snr_db=float("inf"))


@pytest.mark.slow
def test_ideal_ber_matches_theory_at_a_million_bits(scenario_factory):
    cfg = scenario_factory(M=128, N=20, snr_grid_db=[4.0, 6.0, 8.0], trials=40, blocks_per_trial=10)
    records = run_ideal(cfg)
    for snr_db in cfg.snr_grid_db:
        sent = sum(r.bits_sent for r in records if r.snr_db == snr_db)
        expected = float(bpsk_theoretical_ber(10 ** (snr_db / 10)))
        sigma = np.sqrt(expected * (1 - expected) / sent)
        assert sent >= 10**6
        assert abs(scheme_ber(records, "ideal", snr_db) - expected) <= 3 * sigma


@pytest.mark.slow
def test_reference_link_orders_the_schemes():
    cfg = load_scenario(str(SCENARIOS / "reference.env"), {"snr_grid_db": "0,2,4,6,8", "trials": 5})
    records = run_simulation(cfg)
    curves = {}
    for scheme in ("ideal", "proposed", "pilot"):
        points = []
        for snr_db in cfg.snr_grid_db:
            chosen = [r for r in records if r.scheme == scheme and r.snr_db == snr_db]
            sent = sum(r.bits_sent for r in chosen)
            assert sent >= 10**5
            points.append((sum(r.bit_errors for r in chosen) / sent, sent))
        curves[scheme] = points

    ideal_ber = [ber for ber, _ in curves["ideal"]]
    assert ideal_ber[0] >= 1e-2 and ideal_ber[-1] <= 1e-3
    for lower, upper in (("ideal", "proposed"), ("proposed", "pilot")):
        for (low, low_bits), (high, high_bits) in zip(curves[lower], curves[upper]):
            sigma = np.sqrt(low * (1 - low) / low_bits + high * (1 - high) / high_bits)
            assert low <= high + 1.96 * sigma

    def crossing(scheme):
        snr = snr_at_ber(cfg.snr_grid_db, [ber for ber, _ in curves[scheme]], 1e-3)
        # A curve that never reaches 1e-3 on the grid lies beyond it
        return float("inf") if np.isnan(snr) else snr

    assert crossing("proposed") - crossing("ideal") < crossing("pilot") - crossing("ideal")


@pytest.mark.slow
def test_noiseless_exact_grid_link_over_twenty_trials(scenario_factory):
    cfg = scenario_factory(snr_grid_db=[float("inf")], trials=20, blocks_per_trial=10, exact_grid=True)
    records = run_proposed(cfg)
    assert len(records) == 200
    assert all(r.bit_errors == 0 for r in records)
