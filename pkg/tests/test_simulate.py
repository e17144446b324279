import pytest

from ptgflow import completion
from ptgflow.simulate import confirmed_counts_match, simulate


@pytest.mark.parametrize("n_ranks", [1, 2, 5, 8])
def test_simulations_shut_down_cleanly(n_ranks):
    for seed in range(15):
        res = simulate(n_ranks, n_messages=(seed * 37) % 300, seed=seed, trace=True)
        assert res.ok, (seed, res.violations)
        assert res.counts_stable
        assert res.handled == res.sent


def test_zero_message_program():
    res = simulate(4, 0, seed=1)
    assert res.ok and res.rounds == 1 and res.sent == 0


def test_same_seed_same_schedule():
    a = simulate(3, 100, seed=9)
    b = simulate(3, 100, seed=9)
    assert (a.ticks, a.passes, a.rounds) == (b.ticks, b.passes, b.rounds)


def test_pass_budget_reports_liveness_failure():
    res = simulate(4, 300, seed=2, max_passes=50)
    assert not res.shutdown


def _confirm_blindly(self, queued, processed, idle):
    # broken worker: confirms any request without checking its counts
    out = []
    if (queued, processed) != self.last_sent:
        self.last_sent = (queued, processed)
        out.append(completion.Count(self.rank, queued, processed))
    req = self.last_request
    if req is not None and req.round > self.confirmed_round:
        self.confirmed_round = req.round
        out.append(completion.Confirmation(self.rank, req.round))
    return out


def test_oracle_catches_a_broken_protocol(monkeypatch):
    monkeypatch.setattr(completion.WorkerRankState, "step", _confirm_blindly)
    bad = [s for s in range(40) if simulate(4, 200, seed=s).violations]
    assert bad, "the oracle should flag early shutdowns"


def test_count_stability_checker_rejects_mismatch():
    from ptgflow.completion import Confirmation, Request

    trace = [
        (0, "recv", Request(0, 1, 2, 2), None),
        (0, "send", Confirmation(0, 1), (2, 3)),
    ]
    assert not confirmed_counts_match(trace, 1, 1)
    trace[1] = (0, "send", Confirmation(0, 1), (2, 2))
    assert confirmed_counts_match(trace, 1, 1)
