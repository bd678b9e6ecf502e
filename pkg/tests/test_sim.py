from __future__ import annotations

import json

import numpy as np
import pytest

from mvglmm.core import RESPONSES, load_cohort, stratify, write_cohort
from mvglmm.ggm import ips_fit, partial_correlation_table
from mvglmm.graphs import UndirectedGraph, fixture_graph, fixture_labels
from mvglmm.pipeline import fit_stratum
from mvglmm.sim import (
    PAPER_LIKE_LEVEL, SimScenario, ScenarioError, calibrate_baseline_level, censoring_fraction,
    end_to_end_recovery, fixture_scenario, load_scenarios, preset, scenario_from_graph, simulate_cohort,
    simulate_strata,
)


def test_scenario_from_graph_empty_is_identity():
    assert np.allclose(scenario_from_graph(UndirectedGraph.empty(RESPONSES), {}, np.ones(8)), np.eye(8))


def test_scenario_from_graph_single_edge():
    g = UndirectedGraph(("a", "b"), [("a", "b")])
    sigma = scenario_from_graph(g, {("a", "b"): 0.5}, [1.0, 1.0])
    assert np.allclose(sigma, [[1.0, 0.5], [0.5, 1.0]], atol=1e-12)


@pytest.mark.parametrize("name", ["fig1b_bonus", "fig1a_no_bonus"])
def test_scenario_round_trip(name):
    g = fixture_graph(name)
    variances = np.linspace(0.5, 2.0, 8)
    sigma = scenario_from_graph(g, fixture_labels(name), variances)
    assert np.all(np.linalg.eigvalsh(sigma) > 0)
    assert np.max(np.abs(np.diag(sigma) - variances)) <= 1e-6
    fit = ips_fit(sigma, g, n=100)
    table = {frozenset((a, b)): r for a, b, r in partial_correlation_table(fit)}
    for edge, rho in fixture_labels(name).items():
        assert table[edge] == pytest.approx(rho, abs=1e-6)


def test_scenario_from_graph_non_spd_names_minor():
    labels = ("a", "b", "c")
    g = UndirectedGraph.complete(labels)
    with pytest.raises(ScenarioError, match="leading minor"):
        scenario_from_graph(g, {("a", "b"): 0.6, ("b", "c"): 0.6, ("a", "c"): 0.6}, np.ones(3))


def test_independent_scores():
    sc = SimScenario(n=5000, Sigma_V=np.eye(8), sigma2_U=np.zeros(8), seed=1)
    cohort, _ = simulate_cohort(sc)
    C = np.corrcoef(cohort.scores().T)
    assert np.max(np.abs(C - np.eye(7))) <= 0.05


def test_certain_event():
    # hazard exactly at the clamp: no frailty spread, no covariate or branch effects
    sc = SimScenario(n=200, Sigma_V=np.eye(8) * 1e-14, sigma2_U=np.zeros(8), beta=np.zeros((8, 3)),
                     baseline_hazards=[1.0], seed=2)
    cohort, truth = simulate_cohort(sc)
    assert np.all(cohort.attempts() == 1) and np.all(cohort.passed())
    assert censoring_fraction(cohort) == 0.0


def test_administrative_censoring():
    sc = SimScenario(n=300, Sigma_V=np.eye(8), baseline_hazards=[0.05], admin_censor_period=3, seed=3)
    cohort, truth = simulate_cohort(sc)
    assert cohort.attempts().max() <= 3
    assert np.all(cohort.attempts()[~cohort.passed()] == 3)
    assert np.all((truth.T[~cohort.passed()] > 3) | (truth.T[~cohort.passed()] == -1))


def test_determinism_and_schema_closure(tmp_path):
    sc = fixture_scenario("fig1b_bonus", 150, seed=7)
    a, ta = simulate_cohort(sc)
    b, tb = simulate_cohort(sc)
    assert a.records == b.records and np.array_equal(ta.V, tb.V)
    write_cohort(a, tmp_path / "c.csv")
    assert load_cohort(tmp_path / "c.csv").records == a.records


def test_paper_like_strata_sizes():
    cohort, truths = simulate_strata(preset("paper-like", 299, seed=1))
    b, nb = stratify(cohort)
    assert (b.n, nb.n) == (151, 148)
    assert set(truths) == {"bonus", "no_bonus"}


def test_paper_like_censoring_band():
    cohort, _ = simulate_strata(preset("paper-like", 10_000, seed=2024))
    assert abs(censoring_fraction(cohort) - 0.2408) <= 0.03


@pytest.mark.slow
def test_calibration_rederives_preset_level():
    assert calibrate_baseline_level() == pytest.approx(PAPER_LIKE_LEVEL, abs=1e-8)


def test_predicted_effects_align_with_truth():
    sc = fixture_scenario("fig1a_no_bonus", 600, seed=11)
    cohort, truth = simulate_cohort(sc)
    V = fit_stratum(cohort).effects().values
    for j, label in enumerate(RESPONSES):
        assert np.corrcoef(V[:, j], truth.V[:, j])[0, 1] > 0, label


def test_scenario_file_paths_in_errors(tmp_path):
    bad = {"strata": {"bonus": {"n": 10, "Sigma_V": {"graph": [["Math", "Phys"]], "partial_correlations": [1.5]}}}}
    with pytest.raises(ScenarioError, match=r"strata\.bonus\.Sigma_V\.partial_correlations"):
        load_scenarios(bad)
    with pytest.raises(ScenarioError, match=r"^n: required"):
        load_scenarios({"Sigma_V": np.eye(8).tolist()})
    with pytest.raises(ScenarioError, match="beta"):
        load_scenarios({"n": 5, "Sigma_V": np.eye(8).tolist(), "beta": [1, 2]})


def test_scenario_file_graph_form(tmp_path):
    body = {"n": 50, "seed": 3, "Sigma_V": {"graph": [["Math", "Phys"]], "partial_correlations": {"Math-Phys": 0.5}}}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(body))
    sc = load_scenarios(path)["bonus"]
    assert sc.graph().sorted_edges() == [("Math", "Phys")]
    assert sc.Sigma_V[0, 1] == pytest.approx(0.5)


def test_scenario_to_dict_round_trip():
    sc = fixture_scenario("fig1b_bonus", 40, seed=5)
    again = load_scenarios(json.loads(json.dumps(sc.to_dict())))["bonus"]
    assert np.allclose(again.Sigma_V, sc.Sigma_V)
    assert simulate_cohort(again)[0].records == simulate_cohort(sc)[0].records


def test_recovery_empty_truth():
    sc = preset("empty", 2000, seed=4)["bonus"]
    report = end_to_end_recovery(sc, 20)
    assert all(r.error is None for r in report.replicates)
    assert np.mean(report.shd) <= 1


def test_recovery_single_replicate_deterministic():
    sc = fixture_scenario("fig1b_bonus", 300, seed=9)
    assert end_to_end_recovery(sc, 1).to_dict() == end_to_end_recovery(sc, 1).to_dict()


def test_recovery_rejects_zero_replicates():
    with pytest.raises(ValueError):
        end_to_end_recovery(fixture_scenario("fig1b_bonus", 50), 0)


def test_scenario_validation():
    with pytest.raises(ScenarioError, match="Sigma_V"):
        SimScenario(n=10, Sigma_V=-np.eye(8))
    with pytest.raises(ScenarioError, match="branch_probabilities"):
        SimScenario(n=10, Sigma_V=np.eye(8), branch_probabilities=np.full(10, 0.2))
    with pytest.raises(ScenarioError, match="baseline_hazards"):
        SimScenario(n=10, Sigma_V=np.eye(8), baseline_hazards=[1.5])
