"""Smoke test for the phtn Python module.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

from pathlib import Path

import phtn

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def main():
    travel = phtn.Grammar.load(str(FIXTURES / "travel.phtn"))
    assert travel.tasks[0] == "Travel"
    assert travel.validate() == []
    assert phtn.Grammar.loads(travel.dumps()) == travel

    tree, prob = travel.parse("Buyticket Getin Getout")
    assert abs(prob - 0.8) < 1e-12, prob
    assert travel.parse(["Getout", "Getin"]) is None

    plans = travel.sample(50, seed=1)
    learned, lls = phtn.learn(plans, seed=1)
    assert all(b >= a - 1e-7 for a, b in zip(lls, lls[1:])), lls
    assert all(learned.log_likelihood(p) is not None for p in plans)
    kl, overlap = phtn.estimate_kl(travel, learned, 1000, seed=2)
    assert kl < 0.05 and overlap > 0.5, (kl, overlap)

    merged = phtn.merge_clusters([{"Gobytrain": 5.0, "Gobybike": 1.0}, {"Gobyplane": 3.0, "Gobytrain": 1.0}])
    assert merged == [{"Gobybike": 1.0, "Gobyplane": 15.0, "Gobytrain": 5.0}], merged

    prior = phtn.reconstruct_prior({("a", "b"): 3.0})
    assert abs(prior["a"] - 0.75) < 1e-12 and abs(prior["b"] - 0.25) < 1e-12

    records = [("Gobyplane", ["Gobyplane", "Gobytrain"])] * 3 + [("Gobytrain", ["Gobyplane", "Gobytrain"])]
    ens = phtn.Ensemble.learn(records, seed=3)
    assert len(ens) == 1
    assert ens.prefer("Gobyplane", "Gobytrain") == "p"
    assert ens.prefer("Gobytrain", "Gobytrain") == "unknown"

    oracle = phtn.gen_oracle(8, seed=4)
    assert oracle.validate() == [] and len(oracle.tasks) == 8
    print("phtn smoke test ok:", travel, learned, f"kl={kl:.4f}")


if __name__ == "__main__":
    main()
