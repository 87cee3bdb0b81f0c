"""Command-line entry point: ``bumpercar <subcommand> ...``."""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .core import read_csv, write_csv
from .params import NeParams, read_params, write_params


def _params(path):
    return read_params(path) if path else NeParams()


def _floats(n):
    def parse(text):
        vals = [float(x) for x in text.replace(",", " ").split()]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {len(vals)}")
        return tuple(vals)
    return parse


def cmd_generate(a):
    from .harness import ExcitationProfile, generate_dataset, rich_profile

    if a.profile:
        prof = ExcitationProfile.load(a.profile, a.seed)
    else:
        prof = rich_profile(a.duration, a.seed)
    data = generate_dataset(prof, _params(a.params), a.noise)
    if a.pose_only:
        data = data.with_(velocities=None, kin_states=None)
    write_csv(data, a.out)
    print(f"wrote {len(data)} samples ({len(data.meta['bounce'])} wall contacts) to {a.out}")


def cmd_split(a):
    from .harness import split_dataset

    train, val = split_dataset(read_csv(a.inp), a.val_seconds, a.position)
    write_csv(train, a.train)
    write_csv(val, a.val)
    print(f"train {len(train)} samples -> {a.train}; validation {len(val)} samples -> {a.val}")


def cmd_estimate(a):
    from .estimator import EkfConfig, run_filter

    raw = read_csv(a.inp)
    cfg = EkfConfig(**{k: v for k, v in (("q", a.q), ("r", a.r), ("eta", a.eta)) if v is not None})
    run = run_filter(raw.with_(velocities=None, kin_states=None), _params(a.params), cfg)
    write_csv(run.trajectory, a.out)
    nis = run.nis[np.isfinite(run.nis)]
    print(f"labeled {len(raw)} samples -> {a.out}; median NIS {np.median(nis):.3f}" if nis.size else
          f"labeled {len(raw)} samples -> {a.out}")


def cmd_ga_fit(a):
    from .ident_ga import GaConfig, default_spec, ga_fitness, ga_run, read_spec

    data = read_csv(a.data)
    base = _params(a.params)
    spec = read_spec(a.spec) if a.spec else default_spec(base)
    cfg = GaConfig(population_size=a.population, max_generations=a.generations, seed=a.seed)

    def progress(gen, best):
        if a.verbose and (gen % 10 == 0 or gen == cfg.max_generations):
            print(f"generation {gen:4d}  best NMSE {best:.6e}", file=sys.stderr)

    res = ga_run(spec, data, cfg, base, callback=progress)
    write_params(res.params, a.out, header=f"GA fit: seed {a.seed}, one-step NMSE {res.fitness!r}")
    if a.history:
        Path(a.history).write_text("".join(f"{i} {f!r}\n" for i, f in enumerate(res.history)))
    print(f"best one-step NMSE {res.fitness:.6e} after {res.evaluations} evaluations -> {a.out}")
    if a.verbose:
        print(f"nominal-parameter NMSE {ga_fitness(base, data):.6e}", file=sys.stderr)


def cmd_sindy_fit(a):
    from .ident_sindy import fit_ksindy, threshold_sweep

    data = read_csv(a.data)
    params = _params(a.params)
    if a.sweep:
        rows = threshold_sweep(data, a.sweep, params)
        print(f"{'threshold':>10}  {'support vf/af/ar':>18}  residual vf/af/ar")
        for r in rows:
            sup = "/".join(str(s) for s in r["support"])
            res = " ".join(f"{x:.3e}" for x in r["residual"])
            print(f"{r['threshold']:>10.4g}  {sup:>18}  {res}")
        if not a.out:
            return
    model = fit_ksindy(data, a.threshold, params)
    model.save(a.out)
    print(f"{sum(len(t) for t in model.coefficients().values())} nonzero terms -> {a.out}")


def cmd_mlp_train(a):
    from . import nn
    from .ident_sindy import SparseModel

    data = read_csv(a.data)
    cfg = nn.TrainConfig(epochs=a.epochs, seed=a.seed, lr=a.lr)
    if a.kind == "narx":
        model = nn.narx_mlp(data, config=cfg, dropout=a.dropout)
    elif a.kind == "kmlp":
        model = nn.k_mlp(data, config=cfg, dropout=a.dropout)
    else:
        if not a.base:
            raise ValueError("--kind residual needs --base model.sindy")
        model = nn.ksindy_mlp(data, SparseModel.load(a.base, _params(a.params).steering), config=cfg,
                              dropout=a.dropout)
    model.save(a.out)
    r = model.train_result
    print(f"{a.kind}: {len(r.loss)} epochs, best epoch {r.best_epoch}, final training NMSE {r.loss[-1]:.4e} -> {a.out}")


def _predictors(spec, params):
    """``ne,ksindy=model.sindy,ksindy-mlp=net.npz`` -> predictor objects."""
    from .harness import KinematicPredictor, NarxPredictor, NePredictor
    from .ident_sindy import SparseModel, appendix_d_reference
    from .nn import load_model

    names = {"ne": "NE", "reference": "Reference", "ksindy": "K-SINDy", "ksindy-mlp": "K-SINDy-MLP",
             "kmlp": "K-MLP", "narx": "NARX-MLP"}
    out = []
    for item in spec.split(","):
        key, _, path = item.strip().partition("=")
        if key not in names:
            raise ValueError(f"unknown model {key!r}; choose from {', '.join(names)}")
        if key == "ne":
            out.append(NePredictor(read_params(path) if path else params, names[key]))
            continue
        if key == "reference":
            out.append(KinematicPredictor(appendix_d_reference(params.steering), names[key], params))
            continue
        if not path:
            raise ValueError(f"model {key!r} needs a file: {key}=PATH")
        if key == "ksindy":
            out.append(KinematicPredictor(SparseModel.load(path, params.steering), names[key], params))
        elif key == "narx":
            out.append(NarxPredictor(load_model(path, params.steering), names[key], params))
        else:
            out.append(KinematicPredictor(load_model(path, params.steering), names[key], params))
    return out


def cmd_evaluate(a):
    from .core import NormalizationWeights
    from .harness import evaluate

    params = _params(a.params)
    val = read_csv(a.val)
    W = NormalizationWeights.from_targets(read_csv(a.train).velocities) if a.train else None
    info = {**_file_info(a.val), "weights_from": "train" if a.train else "validation"}
    rep = evaluate(_predictors(a.models, params), val, W, a.repeats, info)
    if a.out:
        Path(a.out).write_text(rep.to_json())
    sys.stdout.write(rep.to_json() if a.json else rep.table())


def cmd_rollout(a):
    from .harness import reinit_rollout

    params = _params(a.params)
    (pred,) = _predictors(a.model, params)
    ref = read_csv(a.ref)
    res = reinit_rollout(pred, ref, a.period)
    write_csv(res.predicted, a.out)
    worst = max(res.segments, key=lambda s: s[2])
    print(f"{len(res.segments)} segments -> {a.out}; worst segment {worst[0]}-{worst[1]} NMSE {worst[2]:.4e}")
    if a.segments:
        Path(a.segments).write_text("".join(f"{s} {e} {v!r}\n" for s, e, v in res.segments))


def build_parser():
    p = argparse.ArgumentParser(prog="bumpercar", description="Simulate, label, identify and evaluate single-track vehicle models.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthetic ground-truth data from the Newton-Euler model")
    g.add_argument("--profile", help="excitation profile (TOML); default is a random rich profile")
    g.add_argument("--duration", type=float, default=600.0, help="seconds, for the rich profile")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=_floats(3), default=(0.0, 0.0, 0.0), help="pose noise sigmas 'x y theta'")
    g.add_argument("--params")
    g.add_argument("--pose-only", action="store_true", help="drop velocity and kinematic columns")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("split", help="cut a contiguous validation window")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--val-seconds", type=float, default=110.0)
    s.add_argument("--position", type=float, help="window start in seconds (default: final window)")
    s.set_defaults(fn=cmd_split)

    e = sub.add_parser("estimate", help="EKF labeling of pose-only data")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--q", type=_floats(3), help="process noise 'v_f beta_f beta_r' per second")
    e.add_argument("--r", type=_floats(3), help="measurement variances 'x y theta'")
    e.add_argument("--eta", type=float)
    e.add_argument("--params")
    e.set_defaults(fn=cmd_estimate)

    ga = sub.add_parser("ga-fit", help="genetic-algorithm fit of the Newton-Euler parameters")
    ga.add_argument("--data", required=True)
    ga.add_argument("--spec", help="parameter spec file; default frees the unmeasured parameters")
    ga.add_argument("--params", help="base parameter file")
    ga.add_argument("--out", required=True)
    ga.add_argument("--seed", type=int, default=0)
    ga.add_argument("--population", type=int, default=150)
    ga.add_argument("--generations", type=int, default=200)
    ga.add_argument("--history", help="write best-so-far fitness per generation")
    ga.add_argument("-v", "--verbose", action="store_true")
    ga.set_defaults(fn=cmd_ga_fit)

    sf = sub.add_parser("sindy-fit", help="sparse regression of the kinematic transition")
    sf.add_argument("--data", required=True)
    sf.add_argument("--threshold", type=float, default=0.02)
    sf.add_argument("--sweep", type=lambda t: [float(x) for x in t.split(",")],
                    help="comma-separated thresholds; prints a support table")
    sf.add_argument("--params")
    sf.add_argument("--out")
    sf.set_defaults(fn=cmd_sindy_fit)

    m = sub.add_parser("mlp-train", help="train NARX-MLP, K-MLP or the residual net")
    m.add_argument("--kind", choices=("narx", "kmlp", "residual"), required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--base", help="sparse base model for --kind residual")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--epochs", type=int, default=400)
    m.add_argument("--lr", type=float, default=5e-5)
    m.add_argument("--dropout", type=float, default=0.1)
    m.add_argument("--params")
    m.set_defaults(fn=cmd_mlp_train)

    ev = sub.add_parser("evaluate", help="closed-loop NMSE and runtime per model")
    ev.add_argument("--models", required=True, help="e.g. ne,ksindy=model.sindy,ksindy-mlp=res.npz")
    ev.add_argument("--val", required=True)
    ev.add_argument("--train", help="training data for the shared normalization W")
    ev.add_argument("--params")
    ev.add_argument("--repeats", type=int, default=5)
    ev.add_argument("--json", action="store_true", help="print the JSON report instead of a table")
    ev.add_argument("--out", help="also write the JSON report here")
    ev.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("rollout", help="rollouts reinitialized from the reference every period")
    r.add_argument("--model", required=True, help="one model, same syntax as evaluate --models")
    r.add_argument("--ref", required=True)
    r.add_argument("--period", type=float, default=2.0)
    r.add_argument("--params")
    r.add_argument("--out", required=True)
    r.add_argument("--segments", help="write per-segment NMSE")
    r.set_defaults(fn=cmd_rollout)
    return p


def _file_info(path):
    # name and digest rather than the absolute path, so reports compare across directories
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"validation": Path(path).name, "validation_sha256": digest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"bumpercar {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
