"""Smoke test for the `mpr` extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import mpr


def main():
    assert mpr.layer_count(1000) == 3
    assert mpr.layer_count(100000) == 5
    assert mpr.capture_probability(0.25, 4) == 0.00390625
    assert mpr.capture_probability(0.25, 4, mode="baseline") == 0.25
    by_fraction, by_layers = mpr.figure_tables()
    assert len(by_fraction.splitlines()) == 8 and len(by_layers.splitlines()) == 6

    assert sorted(mpr.permute_indices(bytes(32), 8)) == list(range(1, 9))
    assert mpr.quotas(10, [1, 1, 2]) == [3, 2, 5]

    cfg = mpr.Config(16, seed=3, layers=2, soundness=8)
    frame = mpr.simulate(cfg)
    assert frame.failure is None
    assert frame.conserved()
    assert sorted(frame.delivered) == sorted(frame.submitted)

    report = mpr.verify(frame.transcript)
    assert report.passed, report.rejected()
    assert report.final_outputs == 16

    bad = mpr.Config.from_toml(
        'messages = 12\nlayers = 3\nsoundness = 8\n'
        '[adversary]\nmixes = [3]\nbehavior = "wrong-routing"\n'
    )
    report = mpr.verify(mpr.simulate(bad).transcript)
    assert not report.passed
    assert report.misbehaving == [3]

    try:
        mpr.capture_probability(1.5, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("fraction above 1 accepted")

    est = mpr.grind_experiment([1, 3], 1, 1, 2000, seed=8)
    assert est["ci_low"] <= 0.25 <= est["ci_high"], est
    print("smoke test passed")


if __name__ == "__main__":
    main()
