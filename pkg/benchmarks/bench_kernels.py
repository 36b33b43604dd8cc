"""Compiled vs pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 50]

Times the fused score/Jacobian kernel on its own, then one end-to-end
proposed estimate with M=100 perturbation resamples, under each backend.
The pure-Python run happens in a subprocess with PRAM_PURE_PYTHON=1 so
both backends are measured from a cold import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def measure(repeat: int) -> dict:
    from pram import kernels
    from pram.estfun import LOGIT, IDENTITY
    from pram.estimators import proposed_estimate, proposed_weights
    from pram.estfun import build
    from pram.inference import ResampleConfig, resample_covariance
    from pram.simlab import ScenarioConfig, generate_replicate
    from pram.solver import Problem

    g = np.random.default_rng(0)
    out = {"backend": kernels.BACKEND}
    for n in (1000, 10000):
        X = np.ascontiguousarray(np.stack([np.column_stack([np.ones(n), g.normal(size=n)])] * 2))
        r = np.ascontiguousarray(np.stack([np.zeros(n), np.ones(n)]))
        W = g.normal(size=(n, 2))
        beta = np.array([-1.0, 1.5])
        for name, link in (("identity", IDENTITY), ("logit", LOGIT)):
            t = timeit.timeit(lambda: kernels.glm_score_jac(X, r, W, beta, link, True), number=repeat) / repeat
            out[f"kernel_{name}_n{n}_us"] = 1e6 * t

    cfg = ScenarioConfig("A1", n=2000, p=0.85, R=1, seed=1)
    data = generate_replicate(cfg, 0)
    P = cfg.cells()[0].matrix
    u = build(cfg.estimand)

    def end_to_end():
        res = proposed_estimate(data, P, u)
        resample_covariance(Problem(data, u, proposed_weights(data, P)), res.beta_hat, ResampleConfig(M=100, seed=1))

    out["estimate_plus_100_resamples_ms"] = 1e3 * min(timeit.repeat(end_to_end, number=1, repeat=3))
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return

    rows = []
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("PRAM_PURE_PYTHON", None)
        if pure:
            env["PRAM_PURE_PYTHON"] = "1"
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(proc.stdout))
    fast, slow = rows
    print(f"{'measurement':40s} {fast['backend']:>12s} {slow['backend']:>12s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:40s} {fast[key]:12.1f} {slow[key]:12.1f} {slow[key] / fast[key]:8.2f}x")


if __name__ == "__main__":
    main()
