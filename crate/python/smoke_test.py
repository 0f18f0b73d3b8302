"""Smoke test for the trace_toolkit extension module.

Build and install first:

    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/trace_toolkit-*.whl
"""

import math
import sys
import tempfile
from pathlib import Path

import trace_toolkit as tt


def check_mask():
    # 4x2 mask, left half inside.
    mask = tt.Mask(4, 2, [True, True, False, False] * 2)
    assert (mask.width, mask.height) == (4, 2)
    assert mask.contains(0.1, 0.9) and not mask.contains(0.9, 0.1)
    assert mask.area_fraction() == 0.5
    assert mask.to_rle() == [0, 2, 2, 2, 2]
    assert tt.Mask.from_rle(4, 2, mask.to_rle()).to_rle() == mask.to_rle()
    assert mask.score([(0.1, 0.1), (0.9, 0.9)]) == 0.5
    assert mask.score([]) == 0.0
    try:
        mask.contains(1.5, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range point accepted")


def check_documents():
    points, _ = tt.parse_points("Answer: [(0.25, 0.5), (0.75, 0.125)]")
    assert points == [(0.25, 0.5), (0.75, 0.125)]
    text = tt.serialize_document(
        ["The reference is the mug.", 'Subtype is "Placement Affordance".', "Left of the mug.", "Two points."],
        "Placement Affordance",
        [(0.2, 0.3), (0.25, 0.35)],
    )
    doc = tt.parse_document(text)
    assert doc["complete"], doc
    assert [s["ordinal"] for s in doc["steps"]] == [1, 2, 3, 4]
    assert doc["subtype"] == "Placement Affordance"
    assert doc["points"] == [[0.2, 0.3], [0.25, 0.35]]
    assert tt.parse_document("no steps here")["complete"] is False


def check_benchmark():
    with tempfile.TemporaryDirectory() as d:
        meta = tt.build_benchmark(20, seed=7, holdout=["between"], out_dir=d)
        assert meta["n_main"] + meta["n_holdout"] == 20
        assert (Path(d) / "main.jsonl").exists()
        again = tt.build_benchmark(20, seed=7, holdout=["between"])
        assert again == meta


def check_stats():
    a = [48.0, 48.2, 48.1]
    b = [43.3, 44.5, 43.9]
    r = tt.welch_t_test(a, b)
    # Hand computation: var_a = 0.01, var_b = 0.36, n = 3 each.
    se = math.sqrt(0.01 / 3 + 0.36 / 3)
    assert abs(r["t"] - (48.1 - 43.9) / se) < 1e-9
    df = (0.01 / 3 + 0.36 / 3) ** 2 / ((0.01 / 3) ** 2 / 2 + (0.36 / 3) ** 2 / 2)
    assert abs(r["df"] - df) < 1e-9
    try:
        from scipy import stats as sps

        assert abs(r["p"] - sps.ttest_ind(a, b, equal_var=False).pvalue) < 1e-9
    except ImportError:
        pass
    cmp = tt.compare_summaries("w2p", (48.1, 0.1, 3), (43.9, 0.6, 3))
    assert cmp["welch_sd"]["p"] < cmp["welch_se"]["p"]

    fit = tt.fit_trend([(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (3.0, 7.5)])
    # Closed form: slope = Sxy / Sxx = 10.75 / 5.
    assert abs(fit["slope"] - 2.15) < 1e-12
    assert fit["slope_ci"][0] < fit["slope"] < fit["slope_ci"][1]


def main():
    check_mask()
    check_documents()
    check_benchmark()
    check_stats()
    print("python smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
