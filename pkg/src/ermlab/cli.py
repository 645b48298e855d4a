"""Batch experiment runner.

One subcommand per experiment; all randomness flows from ``--seed`` and
results are written as canonical JSON (sorted keys, fixed separators),
so identical invocations produce byte-identical files regardless of
``--threads``.  Exit codes: 0 success, 1 failed test verdict, 2 invalid
configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, cascade, dovsud, erm, exchtest, parisi, vianabray
from .errors import CapabilityError, ValidationError
from .rng import SeedContext, substream

RESULT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["artifact", "version", "command", "config", "result"],
    "properties": {
        "artifact": {"const": "ermlab"},
        "version": {"type": "string"},
        "command": {"type": "string"},
        "config": {"type": "object"},
        "result": {"type": "object"},
    },
}


def _emit(args, command: str, config: dict, result: dict) -> None:
    payload = {
        "artifact": "ermlab",
        "version": __version__,
        "command": command,
        "config": config,
        "result": result,
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _parse_floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x]


def _parse_ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x]


def _parse_permutation(text: str) -> dict:
    pi = {}
    for part in text.split(","):
        if not part:
            continue
        a, b = part.split(":")
        pi[int(a)] = int(b)
    if sorted(pi.keys()) != sorted(pi.values()):
        raise ValidationError(f"not a permutation: {text!r}")
    return pi


def _sigma_from_arg(text: str) -> parisi.SigmaFunction:
    if text == "rs_coin":
        return parisi.rs_coin()
    if text == "rs_const":
        return parisi.rs_const()
    if text.startswith("rs_tilt:"):
        return parisi.rs_tilt(_parse_floats(text.split(":", 1)[1]))
    with open(text) as fh:
        obj = json.load(fh)
    if obj.get("kind") == "threshold":
        table = np.asarray(obj["thresholds"]).reshape(obj["shape"])
        return parisi.SigmaFunction(kind="threshold", thresholds=table,
                                    name=obj.get("name", "file"))
    if obj.get("kind") == "grid":
        table = np.asarray(obj["table"]).reshape(obj["shape"])
        return parisi.grid_sigma(table)
    raise ValidationError(f"unrecognized sigma description in {text!r}")


def _builtin_sampler(name: str, n: int):
    if name == "iid":
        return erm.iid_coin_sampler(n), "position"
    if name == "biased":
        return erm.biased_coin_sampler(n), "position"
    if name == "example3":
        kernel = erm.Kernel.binary((np.arange(8) + 0.5) / 8.0)
        return erm.erpm_sampler(kernel, n), "position"
    if name == "example4":
        return erm.bipartition_sampler(n), "pair"
    if name == "vb":
        return vianabray.vb_empirical_sampler(N=n, alpha=0.5, beta=1.0, r=2), "site"
    raise ValidationError(f"unknown sampler {name!r}")


def _default_cylinders(name: str, n: int):
    if name == "example4":
        return [
            exchtest.CylinderSpec([((1, 2), 1)]),
            exchtest.CylinderSpec([((1, 2), 0)]),
            exchtest.CylinderSpec([((1, 2), 1), ((2, 3), 1)]),
            exchtest.CylinderSpec([((1, 3), 1), ((2, 3), 0)]),
        ]
    if name == "vb":
        return [
            exchtest.CylinderSpec([((0, 1), 1)]),
            exchtest.CylinderSpec([((0, 2), -1)]),
            exchtest.CylinderSpec([((0, 1), 1), ((1, 1), 1)]),
            exchtest.CylinderSpec([((0, 1), 1), ((1, 2), -1)]),
        ]
    cyls = [
        exchtest.CylinderSpec([(1, 1)]),
        exchtest.CylinderSpec([(2, -1)]),
        exchtest.CylinderSpec([(1, 1), (2, 1)]),
    ]
    if n >= 3:
        cyls.append(exchtest.CylinderSpec([(1, -1), (3, 1)]))
    return cyls


def cmd_vb_fn(args) -> int:
    ctx = SeedContext(args.seed, ("vb-fn",))
    coupling = vianabray.CouplingLaw.pm1()
    est = vianabray.free_energy_mc(args.n, args.alpha, args.beta, args.instances,
                                   ctx, coupling=coupling, threads=args.threads)
    config = {
        "n": args.n, "alpha": args.alpha, "beta": args.beta,
        "instances": args.instances, "seed": args.seed, "threads": args.threads,
    }
    _emit(args, "vb-fn", config, est.to_dict())
    return 0


def cmd_parisi_eval(args) -> int:
    ctx = SeedContext(args.seed, ("parisi-eval",))
    inner = None if args.inner == "exact" else int(args.inner.split(":")[1])
    cfg = parisi.PEvalConfig(alpha=args.alpha, beta=args.beta,
                             outer_samples=args.outer, inner_samples=inner)
    sigma = _sigma_from_arg(args.sigma)
    est = parisi.evaluate_functional(sigma, cfg, ctx)
    config = {
        "sigma": args.sigma, "alpha": args.alpha, "beta": args.beta,
        "outer": args.outer, "inner": args.inner, "seed": args.seed,
    }
    _emit(args, "parisi-eval", config, est.to_dict())
    return 0


def cmd_parisi_min(args) -> int:
    ctx = SeedContext(args.seed, ("parisi-min",))
    cfg = parisi.PEvalConfig(alpha=args.alpha, beta=args.beta,
                             outer_samples=args.outer)
    family = parisi.rs_tilt_family(cells=args.params, bound=args.bound)
    res = parisi.minimize_functional(family, cfg, args.budget, ctx)
    config = {
        "family": args.family, "params": args.params, "bound": args.bound,
        "budget": args.budget, "alpha": args.alpha, "beta": args.beta,
        "outer": args.outer, "seed": args.seed,
    }
    _emit(args, "parisi-min", config, {
        "best_params": [float(x) for x in res.params],
        "best": res.estimate.to_dict(),
        "evaluations": res.evaluations,
        "incumbent": [float(min(res.history[: i + 1])) for i in range(len(res.history))],
    })
    return 0


def cmd_compare(args) -> int:
    ctx = SeedContext(args.seed, ("compare",))
    cfg = parisi.PEvalConfig(alpha=args.alpha, beta=args.beta,
                             outer_samples=args.outer)
    family = parisi.rs_tilt_family(cells=args.params, bound=args.bound)
    report = parisi.compare_to_finite_size(
        args.alpha, args.beta, _parse_ints(args.n), args.instances,
        family, cfg, args.budget, ctx, threads=args.threads,
    )
    config = {
        "n": args.n, "alpha": args.alpha, "beta": args.beta,
        "instances": args.instances, "outer": args.outer,
        "budget": args.budget, "seed": args.seed, "threads": args.threads,
    }
    _emit(args, "compare", config, report.to_dict())
    return 0


def cmd_cascade(args) -> int:
    ctx = SeedContext(args.seed, ("cascade",))
    m = _parse_floats(args.m)
    tree = cascade.TreeSpec(depth=len(m), branching=args.trunc)
    weights = cascade.sample_cascade(tree, m, ctx, truncation=args.trunc)
    flat = weights.flat()
    config = {"depth": len(m), "m": m, "trunc": args.trunc, "seed": args.seed}
    _emit(args, "cascade", config, {
        "leaf_count": int(flat.size),
        "weight_sum": float(flat.sum()),
        "sum_squares": weights.sum_squares(),
        "top_weights": [float(x) for x in np.sort(flat)[::-1][:16]],
    })
    return 0


def cmd_ds(args) -> int:
    with open(args.kernels) as fh:
        spec = json.load(fh)
    kernels = []
    for item in spec["kernels"]:
        if "p_plus" in item:
            kernels.append(dovsud.moments_from_kernel(
                erm.Kernel.binary(np.asarray(item["p_plus"]))))
        else:
            mean = np.asarray(item["mean"])
            kernels.append(dovsud.MomentKernel(
                grid_depth=int(np.log2(len(mean))),
                mean=mean,
                second_moment=np.asarray(item["second_moment"]),
            ))
    decomp = dovsud.decompose_from_kernels(kernels)
    gram = dovsud.reconstruct(decomp)
    config = {"kernels": args.kernels, "seed": args.seed}
    _emit(args, "ds", config, {
        "decomposition": json.loads(decomp.to_json()),
        "gram": json.loads(gram.to_json()),
    })
    return 0


def cmd_erm_sample(args) -> int:
    ctx = SeedContext(args.seed, ("erm-sample",))
    sampler, _ = _builtin_sampler(args.directing, args.n)
    data = sampler(ctx, args.samples)
    keys = sorted(data.keys(), key=lambda k: (0, k) if isinstance(k, int) else (1, k))
    k_order = 2 if args.directing == "example4" else 1
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(",".join(_key_name(k) for k in keys) + "\n")
            for row in range(args.samples):
                fh.write(",".join(str(int(data[k][row])) for k in keys) + "\n")
    config = {"directing": args.directing, "n": args.n,
              "samples": args.samples, "seed": args.seed}
    result = {
        "seed": args.seed, "n": args.n, "k": k_order,
        "directing_id": args.directing,
        "keys": [_key_name(k) for k in keys],
        "means": {_key_name(k): float(np.mean(data[k])) for k in keys},
    }
    _emit(args, "erm-sample", config, result)
    return 0


def _key_name(key) -> str:
    if isinstance(key, tuple):
        return "{" + ";".join(str(x) for x in key) + "}"
    return "{" + str(key) + "}"


def cmd_exch_test(args) -> int:
    ctx = SeedContext(args.seed, ("exch-test",))
    sampler, kind = _builtin_sampler(args.sampler, args.n)
    pi = _parse_permutation(args.pi)
    cylinders = _default_cylinders(args.sampler, args.n)
    report = exchtest.permutation_invariance_test(
        sampler, pi, cylinders, args.samples, substream(ctx, "test"),
        key_kind=kind,
    )
    config = {"sampler": args.sampler, "n": args.n, "samples": args.samples,
              "pi": args.pi, "seed": args.seed}
    _emit(args, "exch-test", config, json.loads(report.to_json()))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ermlab",
        description="Exchangeable-random-measure and dilute spin-glass experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vb-fn", help="finite-size free energy over instances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_vb_fn)

    p = sub.add_parser("parisi-eval", help="evaluate the free-energy functional")
    p.add_argument("--sigma", required=True,
                   help="rs_coin | rs_const | rs_tilt:h1,h2,... | file.json")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--outer", type=int, default=10000)
    p.add_argument("--inner", default="exact", help="exact | mc:N")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_parisi_eval)

    p = sub.add_parser("parisi-min", help="minimize over a parametric family")
    p.add_argument("--family", default="rs_tilt")
    p.add_argument("--params", type=int, default=1)
    p.add_argument("--bound", type=float, default=3.0)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--outer", type=int, default=5000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_parisi_min)

    p = sub.add_parser("compare", help="finite-size table vs the family optimum")
    p.add_argument("--n", required=True, help="comma-separated sizes, e.g. 12,16,20")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--outer", type=int, default=5000)
    p.add_argument("--budget", type=int, default=40)
    p.add_argument("--params", type=int, default=1)
    p.add_argument("--bound", type=float, default=3.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cascade", help="sample tree cascade weights")
    p.add_argument("--m", required=True, help="comma-separated level parameters")
    p.add_argument("--trunc", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("ds", help="decompose kernels and reconstruct the Gram matrix")
    p.add_argument("--kernels", required=True, help="JSON file of kernel tables")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ds)

    p = sub.add_parser("erm-sample", help="draw slices from a built-in directing")
    p.add_argument("--directing", required=True,
                   help="iid | biased | example3 | example4 | vb")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_erm_sample)

    p = sub.add_parser("exch-test", help="permutation-invariance test of a sampler")
    p.add_argument("--sampler", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--pi", default="1:2,2:1")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_exch_test)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
