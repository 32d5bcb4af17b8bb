"""Smoke test for the pypenselect extension module."""

import json
import math

import pypenselect as ps


def main():
    assert ps.KAPPA == 18.0
    assert ps.oracle_constant(2.0) == 10.0
    assert abs(ps.chaining_h(1.0, 0.0, 1) - 8.18) < 0.01

    p = ps.Partition(8, [(1, 4), (5, 8)])
    q = ps.Partition.regular(8, 4)
    assert p.refine(q) == q and q.refines(p)
    s = ps.histogram_space(p)
    assert s.dim == 2 and abs(s.lambda2 ** 2 - 0.25) < 1e-12
    pp = ps.piecewise_poly_space(p, 1)
    mono = ps.Subspace.span(
        [[float(i <= 4) for i in range(1, 9)], [float(i) * (i <= 4) for i in range(1, 9)],
         [float(i > 4) for i in range(1, 9)], [float(i) * (i > 4) for i in range(1, 9)]]
    )
    assert pp.projector_distance(mono) < 1e-8
    assert ps.trig_space([0, 1, 2], 8, 1).gram_deviation() < 1e-12
    assert len(ps.dyadic_partitions(16, 4)) == 5

    noise = ps.NoiseSpec("centered_poisson", {"mu": 2.0})
    assert noise.verify_subgamma()["ok"]
    assert len(noise.sample(10, seed=1)) == 10
    try:
        ps.NoiseSpec("centered_poisson", {"mu": 1.0}, sigma=1.0, c=0.0)
    except ps.PenselectError:
        pass
    else:
        raise AssertionError("uncertified noise accepted")

    n = 64
    coll = ps.ModelCollection.dyadic(n, 4)
    f = [0.0] * 32 + [1.0] * 32
    y = [a + e for a, e in zip(f, ps.NoiseSpec.gaussian(0.05).sample(n, 3))]
    r = ps.select_model(y, coll, ps.NoiseSpec.gaussian(0.05), {"mode": "general", "K": 2.0})
    assert r["chosen_id"] in coll.ids()
    chosen = r["per_model"][r["chosen_index"]]
    assert chosen["crit"] == r["crit"]
    assert math.isclose(sum((a - b) ** 2 for a, b in zip(y, r["fitted"])), chosen["residual_sq"], rel_tol=1e-9)

    cfg = json.loads(next(c for c in ps.default_suite() if '"verify_noise"' in c))
    cfg["trials"] = 2000
    cfg["mgf_samples"] = 20000
    report = ps.run_experiment(json.dumps(cfg), threads=2)
    assert report["all_pass"], report["records"]
    print(f"smoke test ok: selected {r['chosen_id']}, {len(report['records'])} records in {cfg['name']}")


if __name__ == "__main__":
    main()
