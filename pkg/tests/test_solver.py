import numpy as np
import pytest
import scipy.sparse as sp

from ostb.energy import Action, HarvestModel, table_one
from ostb.mdp import FiniteMdp, RewardConfig, build_mdp
from ostb.solver import (
    OccupationMeasure,
    ThresholdStructureError,
    advantage,
    brute_force_optimum,
    evaluate_policy,
    extract_policy,
    extract_thresholds,
    greedy_policy,
    load_policy,
    policy_document,
    q_values,
    relative_value_iteration,
    solve_lp,
    threshold_violations,
    verify_unichain,
)

from oracles import dense_gain, enumerate_gain


def toy():
    # state 0: action 0 (reward 0) or action 1 (reward 1), both self-loops;
    # state 1: a single action back to state 0
    P = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))
    return FiniteMdp([0, 0, 1], [0, 1, 0], P, [0.0, 1.0, 0.0])


# small generic models

def test_toy_lp():
    occ = solve_lp(toy())
    assert occ.objective == pytest.approx(1.0)
    assert occ.x.tolist() == pytest.approx([0.0, 1.0, 0.0])


def test_toy_rvi():
    res = relative_value_iteration(toy())
    assert res.gain == pytest.approx(1.0, abs=1e-10)
    assert res.policy[0] == 1


def test_zero_reward():
    m = toy()
    zero = FiniteMdp(m.pair_state, m.pair_action, m.transitions, np.zeros(3))
    assert relative_value_iteration(zero).gain == pytest.approx(0.0, abs=1e-12)
    assert solve_lp(zero).objective == pytest.approx(0.0, abs=1e-12)


def test_rvi_nonconvergence_reported():
    from ostb.solver import SolverError
    with pytest.raises(SolverError, match="did not converge"):
        relative_value_iteration(toy(), tol=0.0, max_iters=5)


def test_timed_toy_gain():
    # a task of duration 4 with reward 1 vs sleeping with reward 0.2 per step:
    # per time the task earns 0.25 > 0.2
    P = sp.csr_matrix(np.array([[1.0], [1.0]]))
    m = FiniteMdp([0, 0], [0, 1], P, [0.2, 1.0], durations=[1, 4])
    assert solve_lp(m).objective == pytest.approx(0.25)
    assert relative_value_iteration(m).gain == pytest.approx(0.25, abs=1e-9)


# the small device instance

def test_small_instance_oracles(small_model):
    best, count = enumerate_gain(small_model)
    assert count == 2 ** 12
    lp = solve_lp(small_model).objective
    rvi = relative_value_iteration(small_model).gain
    assert lp == pytest.approx(best, abs=1e-8)
    assert rvi == pytest.approx(best, abs=1e-8)


def test_small_instance_per_epoch(small_params, u3):
    m = build_mdp(small_params, u3, criterion="epoch")
    best, _ = enumerate_gain(m)
    assert solve_lp(m).objective == pytest.approx(best, abs=1e-8)
    assert relative_value_iteration(m).gain == pytest.approx(best, abs=1e-8)


def test_brute_force_helper(small_model):
    best, policy = brute_force_optimum(small_model)
    assert evaluate_policy(small_model, policy).gain == pytest.approx(best, abs=1e-10)
    assert best == pytest.approx(enumerate_gain(small_model)[0], abs=1e-10)
    with pytest.raises(ValueError):
        brute_force_optimum(small_model, max_decidable=3)


# Table I

def test_lp_matches_rvi(solution_u3):
    assert solution_u3.rvi.gain == pytest.approx(solution_u3.occupation.objective, rel=1e-6)


def test_occupation_constraints(solution_u3, model_u3):
    norm, flow = solution_u3.occupation.residuals(model_u3.time_normalized())
    assert norm <= 1e-8 and flow <= 1e-8
    assert solution_u3.occupation.x.min() >= -1e-12


def test_gain_two_representations(solution_u3, model_u3):
    occ = solution_u3.occupation
    assert occ.objective == pytest.approx(occ.x @ model_u3.time_normalized().rewards, abs=1e-12)
    assert solution_u3.report.gain == pytest.approx(occ.objective, abs=1e-6)
    # independent dense evaluation of the same policy on the raw model
    P, r = model_u3.induced_chain(solution_u3.policy)
    d = model_u3.durations[model_u3.policy_pairs(solution_u3.policy)]
    assert dense_gain(P.toarray(), r, d) == pytest.approx(occ.objective, abs=1e-8)


def test_policy_is_threshold(solution_u3, model_u3):
    assert threshold_violations(solution_u3.policy, model_u3) == []
    assert solution_u3.thresholds is not None


def test_policy_actions_allowed(solution_u3, model_u3):
    model_u3.policy_pairs(solution_u3.policy)


def test_advantage_single_sign_change(solution_u3, model_u3, params):
    q = q_values(model_u3, solution_u3.rvi.bias)
    flips = []
    for flag, window, task in ((0, params.sense_window, Action.SENSE),
                               (1, params.transmit_window, Action.TRANSMIT)):
        for m in window:
            blk = model_u3.space.block(m, flag)
            d = q[model_u3.pair_index[blk, int(task)]] - q[model_u3.pair_index[blk, 0]]
            up = d >= -1e-7
            flips.append(int(np.abs(np.diff(up.astype(int))).sum()))
            if up.any():
                assert up[int(np.argmax(up)):].all()
    assert max(flips) <= 1
    assert sum(flips) >= len(flips) - 1


def test_advantage_function(solution_u3, model_u3):
    s = model_u3.state(20, 3, 0)
    adv = advantage(model_u3, solution_u3.rvi.bias, s)
    assert adv[Action.SLEEP] == 0.0 and Action.SENSE in adv
    with pytest.raises(ValueError):
        advantage(model_u3, solution_u3.rvi.bias, model_u3.state(20, 40, 0))


def test_advantage_zero_when_branches_equal():
    # both actions self-loop with zero reward
    P = sp.csr_matrix(np.array([[1.0], [1.0]]))
    m = FiniteMdp([0, 0], [0, 1], P, [0.0, 0.0])
    assert advantage(m, np.zeros(1), 0)[Action.SENSE] == 0.0


def test_greedy_matches_policy_on_recurrent(solution_u3, model_u3):
    greedy = greedy_policy(model_u3, q_values(model_u3, solution_u3.rvi.bias), tie_tol=1e-7)
    rep = verify_unichain(solution_u3.policy, model_u3)
    rec = np.concatenate(rep.recurrent_classes)
    assert np.array_equal(greedy[rec], solution_u3.policy[rec])


# extract_policy

def test_extract_single_mass():
    m = toy()
    sleepy = FiniteMdp(m.pair_state, m.pair_action, m.transitions, [1.0, 0.0, 0.0])
    occ = OccupationMeasure(np.array([1.0, 0.0, 0.0]), 1.0, 1.0, np.zeros(2), 0)
    pol = extract_policy(occ, sleepy, bias=np.zeros(2))
    assert pol[0] == 0


def test_extract_tie_prefers_task():
    m = toy()
    occ = OccupationMeasure(np.array([0.6, 0.4, 0.0]), 0.0, 0.0, np.zeros(2), 0)
    pol = extract_policy(occ, m, bias=np.zeros(2), tie_tol=0.0)
    assert pol[0] == 1


def test_extract_fills_empty_states_greedily():
    m = toy()
    occ = OccupationMeasure(np.array([0.0, 1.0, 0.0]), 1.0, 1.0, np.zeros(2), 0)
    pol = extract_policy(occ, m, bias=np.zeros(2))
    assert pol.tolist() == [1, 0]


# unichain checks

def test_always_sleep_unichain(model_u3):
    rep = verify_unichain(np.zeros(model_u3.n_states, dtype=int), model_u3)
    assert rep.n_recurrent == 1 and rep.reset_in_recurrent
    flags = model_u3.space.table()[:, 2]
    assert np.all(flags[rep.recurrent_classes[0]] == 0)
    assert set(np.flatnonzero(flags > 0)) <= set(rep.transient)


def test_sense_at_start_unichain(model_u3, params):
    policy = np.zeros(model_u3.n_states, dtype=int)
    policy[model_u3.space.block(0, 0)] = int(Action.SENSE)
    rep = verify_unichain(policy, model_u3)
    assert rep.n_recurrent == 1 and rep.reset_in_recurrent
    tab = model_u3.space.table()
    early = np.flatnonzero((tab[:, 2] == 0) & (tab[:, 1] > 0))
    assert set(early) <= set(rep.transient)


def test_two_closed_classes_detected():
    P = sp.identity(2, format="csr")
    rep = verify_unichain([0, 0], FiniteMdp([0, 1], [0, 0], P, [0.0, 0.0]), reset_states=[0])
    assert rep.n_recurrent == 2 and rep.reset_in_recurrent is False


# thresholds

def test_thresholds_all_levels_and_never(model_u3, params):
    policy = np.zeros(model_u3.n_states, dtype=int)
    policy[model_u3.space.block(4, 0)] = int(Action.SENSE)
    t = extract_thresholds(policy, model_u3)
    assert t.sense[4] == 0
    assert t.sense[5] is None
    assert all(v is None for v in t.transmit.values())


def test_non_threshold_reported(model_u3):
    policy = np.zeros(model_u3.n_states, dtype=int)
    blk = model_u3.space.block(2, 0)
    policy[blk[10]] = int(Action.SENSE)
    with pytest.raises(ThresholdStructureError, match="tau=2"):
        extract_thresholds(policy, model_u3)
    assert threshold_violations(policy, model_u3) == [(2, 0)]


def test_evaluate_policy_interval_metrics(model_u3):
    rep = evaluate_policy(model_u3, np.zeros(model_u3.n_states, dtype=int))
    assert rep.gain == 0.0 and rep.tasks_per_interval == 0.0
    assert rep.epochs_per_interval == pytest.approx(model_u3.params.subintervals)


def test_policy_document_roundtrip(solution_u3, model_u3, tmp_path):
    import json
    doc = policy_document(solution_u3, model_u3, "abc")
    path = tmp_path / "policy.json"
    path.write_text(json.dumps(doc))
    actions, back = load_policy(path)
    assert np.array_equal(actions, solution_u3.policy)
    assert back["model_hash"] == "abc"
    path.write_text(json.dumps({**doc, "version": 7}))
    with pytest.raises(ValueError):
        load_policy(path)


def test_basic_and_sigmoid_policy_files(params, u3, model_u3, solution_u3):
    # on this configuration the two rewards select the same action table;
    # the documents still differ through their gains
    from ostb.solver import solve
    sig_model = build_mdp(params, u3, RewardConfig("sigmoid", 25.0, 0.9))
    sig = solve(sig_model, rule="dantzig")
    assert threshold_violations(sig.policy, sig_model) == []
    assert threshold_violations(solution_u3.policy, model_u3) == []
    a = policy_document(sig, sig_model)
    b = policy_document(solution_u3, model_u3)
    assert a != b and a["reward"] != b["reward"]
