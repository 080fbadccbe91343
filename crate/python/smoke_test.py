"""Smoke test of the Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/python
Then run:
    python3 python/smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

import smagrb

CONFIG = """
[problem]
benchmark = { kind = "cavity", n = 4 }
mu_range = [1000.0, 2000.0]

[eim]
train_points = 8
tol = 1e-3

[certification]
beta_samples = 3
beta_budget = 5
gamma_samples = 1
inverse_samples = 10

[rb]
train_points = 8
tol = 1e-3
n_pod = 2
max_basis = 6
"""


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        cfg = tmp / "smoke.toml"
        cfg.write_text(CONFIG)
        out = tmp / "out"

        summary = smagrb.offline(str(cfg), str(out))
        print("offline:", summary)
        assert summary["triangles"] == 32
        assert summary["rb_size"] >= 2

        model = smagrb.ReducedModel(str(out))
        assert model.mu_range == (1000.0, 2000.0)
        mu = model.selected[0]

        # A parameter whose snapshot is in the basis is reproduced.
        u_rb, p_rb = model.solve(mu)
        u_fe, p_fe = model.truth(mu)
        err = math.sqrt(sum((a - b) ** 2 for a, b in zip(u_rb, u_fe)))
        norm = math.sqrt(sum(a * a for a in u_fe))
        print(f"reproduction at mu = {mu}: relative error {err / norm:.2e}")
        assert err <= 1e-6 * norm

        b = model.bound(1500.0)
        print("bound at 1500:", b)
        assert b["tau"] >= 0.0
        assert b["certified"] == (b["bound"] is not None)

        rows = model.benchmark([1250.0, 2500.0])
        assert [r["out_of_range"] for r in rows] == [False, True]
        assert all(r["error"] is None for r in rows)

        try:
            smagrb.ReducedModel(str(tmp / "missing"))
        except smagrb.ConfigError as e:
            print("missing directory rejected:", e)
        else:
            raise AssertionError("expected ConfigError")

        bad = tmp / "bad.toml"
        bad.write_text(CONFIG.replace("[1000.0, 2000.0]", "[2000.0, 1000.0]"))
        try:
            smagrb.offline(str(bad), str(tmp / "bad"))
        except smagrb.ConfigError:
            pass
        else:
            raise AssertionError("expected ConfigError")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
