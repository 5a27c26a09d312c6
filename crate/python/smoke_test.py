"""Smoke test of the compiled `slowwalk` extension.

Either install the module (`maturin develop -m crates/py/pyproject.toml`) or
build it with `cargo build --release -p slowwalk-py --features extension-module`;
in the second case this script loads target/release/libslowwalk_py.so.
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
from pathlib import Path


def load():
    try:
        import slowwalk

        return slowwalk
    except ImportError:
        pass
    root = Path(__file__).resolve().parent.parent
    lib = Path(os.environ.get("SLOWWALK_LIB", root / "target" / "release" / "libslowwalk_py.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}; build it first")
    loader = importlib.machinery.ExtensionFileLoader("slowwalk", str(lib))
    spec = importlib.util.spec_from_file_location("slowwalk", lib, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    sw = load()
    print("slowwalk", sw.__version__)

    chain = sw.Environment.chain([0.0, math.log(2.0), 0.0])
    a, b, h = chain.edge_law(2)
    assert abs(h - 4.0) < 1e-12, h
    assert abs(a - 0.25) < 1e-12 and abs(b - 0.75) < 1e-12
    solved = dict(chain.absorption([2]))
    assert abs(solved[2] - a) < 1e-10

    walk = chain.walk(20_000, seed=5)
    p = walk.visits(2) / walk.excursions
    assert abs(p - a) < 4 * math.sqrt(a * (1 - a) / walk.excursions), p
    total, single, multi = walk.heavy_split(3)
    assert total == single + multi == walk.heavy_range(3)

    env = sw.Environment(seed=42)
    sizes = env.realize_to_depth(6)
    assert sizes[0] == 1 and len(sizes) == 7
    w, d = env.martingales(6)
    assert w[0] == 1.0 and d[0] == 0.0
    print("W_6 =", round(w[6], 4), "D_6 =", round(d[6], 4))

    probs, tail = sw.geo_sum_distribution(10, 0.1, 0.3)
    assert abs(sum(probs) + tail - 1.0) < 1e-12
    assert sw.threshold(1 << 16, 0.5) == 256
    assert abs(sw.one_excursion_heavy_prob(2, 1, 0.5, 0.5) - 0.5) < 1e-12

    csv = sw.run_experiment("thetas = [0.5]\nn_grid = [32, 64, 128, 256]\nreplicas = 16\nhorizon = 4\n")
    assert csv.splitlines()[0].startswith("theta,n,k,replica")
    slope, se = sw.fit_exponent(csv, 0.5)
    print(f"exponent fit on a tiny table: {slope:.3f} +- {se:.3f}")

    c = sw.estimate_constants(n=1000, replicas=50_000)
    assert c["relative_error"] < 0.1, c
    assert len(sw.inequalities()) >= 15

    try:
        sw.Environment(mean=1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("half-specified law was accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
