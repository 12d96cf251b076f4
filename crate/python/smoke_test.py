"""Smoke test for the `ventus` Python extension.

Build and run:

    cargo build --release -p ventus-py --features extension-module
    cp target/release/libventus.so python/ventus.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ventus  # noqa: E402


def main():
    x = ventus.two_tone_series(hours=256, seed=1)
    parts = ventus.eemd(x, ensemble_size=10, seed=1)
    back = ventus.recompose(parts)
    err = math.sqrt(sum((a - b) ** 2 for a, b in zip(back, x)))
    assert err / math.sqrt(sum(a * a for a in x)) < 1e-8, err

    assert ventus.rmse([1.0, 2.0], [1.0, 4.0]) == math.sqrt(2.0)
    a, b = ventus.simple_regression([0.0, 1.0, 2.0], [1.0, 3.0, 5.0])
    assert abs(a - 1.0) < 1e-12 and abs(b - 2.0) < 1e-12

    try:
        ventus.rmse([], [])
    except ValueError:
        pass
    else:
        raise AssertionError("empty rmse should raise ValueError")

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "data")
        planted = ventus.synth(data, seed=2, hours=2200)
        labels = ventus.classify_plants(os.path.join(data, "generation.csv"))
        correct = sum(labels[k] == v for k, v in planted.items())
        assert correct >= 19, (correct, labels)
        fit = ventus.fit_fixed_effects(os.path.join(data, "generation.csv"))
        assert abs(fit["wind"][0] + 0.95) < 0.05, fit["wind"]

        grid = os.path.join(tmp, "grid")
        code = ventus.run_cli(
            ["train-grid", "--data", data, "--steps", "5", "--out", grid]
        )
        assert code == 0, code
        model = ventus.GridForecaster.load(os.path.join(grid, "grid.vtm"))
        states = model.forecast(os.path.join(data, "grid.gt1"), 10, 2)
        assert len(states) == 2 and len(states[0]) == len(model.variables)
        print(model)

    print("ventus smoke test passed")


if __name__ == "__main__":
    main()
